"""Replace surrogate values near a threshold by true evaluations.

Both routines work in place on a level's working values ``G`` and the
boolean mask ``is_true`` marking entries that already hold true values.
Entries that become true are inserted into the design set when one is given.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class CorrectionConfig:
    delta_N: int = 10
    eps_threshold: Optional[float] = None  # default 1e-3 |c0|
    eps_probability: Optional[float] = None  # default 0.05 P0

    def __post_init__(self):
        if self.delta_N < 1:
            raise ValueError("delta_N must be >= 1")
        for eps in (self.eps_threshold, self.eps_probability):
            if eps is not None and eps < 0:
                raise ValueError("stopping tolerances must be non-negative")


@dataclass
class CorrectionResult:
    value: float
    n_evals: int
    iterations: int
    history: list


def quantile_midpoint(G, p0):
    """Order-statistic midpoint ``(G_(Np0) + G_(Np0+1)) / 2`` (1-based)."""
    G = np.sort(np.asarray(G, dtype=float))
    k = int(round(len(G) * p0))
    if not 1 <= k < len(G):
        raise ValueError("N*p0 must lie in [1, N-1]")
    return 0.5 * (G[k - 1] + G[k])


def _replace(idx, X, G, is_true, g, design):
    vals = g.evaluate_many(X[idx])
    G[idx] = vals
    is_true[idx] = True
    if design is not None:
        for x, y in zip(X[idx], vals):
            design.add(x, y)
    return vals


def fix_intermediate_threshold(X, G, is_true, g, p0, cfg=CorrectionConfig(), design=None):
    """Refine the level threshold from the lowest surrogate values upward.

    Stops once two successive thresholds differ by less than the tolerance
    or every value is true. Returns a CorrectionResult with the final
    threshold.
    """
    c = quantile_midpoint(G, p0)
    eps = cfg.eps_threshold
    if eps is None:
        eps = 1e-3 * abs(c)
        if eps == 0.0:
            eps = 1e-3 * float(np.std(G))
    history = [c]
    n_evals = 0
    it = 0
    while True:
        pending = np.flatnonzero(~is_true)
        if len(pending) == 0:
            break
        batch = pending[np.argsort(G[pending], kind="stable")[: cfg.delta_N]]
        _replace(batch, X, G, is_true, g, design)
        n_evals += len(batch)
        it += 1
        c_new = quantile_midpoint(G, p0)
        history.append(c_new)
        done = abs(c_new - c) < eps
        c = c_new
        if done:
            break
    return CorrectionResult(c, n_evals, it, history)


def fix_final_probability(X, G, is_true, g, N=None, cfg=CorrectionConfig(), design=None):
    """Refine the final-level failure fraction in ascending ``|G|`` order."""
    N = len(G) if N is None else N
    count = int(np.count_nonzero(G <= 0.0))
    p = count / N
    eps = cfg.eps_probability
    if eps is None:
        eps = 0.05 * p if p > 0 else 0.5 / N
    history = [p]
    n_evals = 0
    it = 0
    while True:
        pending = np.flatnonzero(~is_true)
        if len(pending) == 0:
            break
        batch = pending[np.argsort(np.abs(G[pending]), kind="stable")[: cfg.delta_N]]
        before = int(np.count_nonzero(G[batch] <= 0.0))
        vals = _replace(batch, X, G, is_true, g, design)
        count += int(np.count_nonzero(vals <= 0.0)) - before
        n_evals += len(batch)
        it += 1
        p_new = count / N
        history.append(p_new)
        done = abs(p_new - p) < eps
        p = p_new
        if done:
            break
    return CorrectionResult(p, n_evals, it, history)
