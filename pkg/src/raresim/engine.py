"""Subset simulation driver and estimator diagnostics.

``run`` executes one subset-simulation estimate either with true
evaluations throughout (``standard``) or with local surrogates inside the
chains (``local-gp``, ``local-quadratic``, ``local-pls-gp``).
"""

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .core import DesignSet, RngStream, Sample, lhs_sample
from .correction import CorrectionConfig, fix_final_probability, fix_intermediate_threshold, quantile_midpoint
from .limit_states import make_limit_state
from .local import SURROGATES, RefinementPolicy, LevelContext, StepInfo, default_N0, local_start, local_step
from .mcmc import ChainStats, ProposalParams, adapt, propose, seed_spread

MODES = ("standard", "local-gp", "local-quadratic", "local-pls-gp")
PROPOSAL_STREAM = 0
CONTROLLER_STREAM = 1


class SubsetSimulationError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class RunConfig:
    benchmark: str = "g11"
    d: Optional[int] = None
    mode: str = "standard"
    N: int = 1000
    p0: float = 0.1
    seed: int = 1
    gamma_T: float = 0.05
    beta0: float = 1.0
    beta1: float = 0.01
    beta2: float = 2.0
    max_refines_per_step: int = 5
    pool_size: int = 200
    delta_N: int = 10
    eps_threshold: Optional[float] = None
    eps_probability: Optional[float] = None
    N0: Optional[int] = None
    high_dim: Optional[bool] = None
    warm_start_fraction: float = 0.1
    max_levels: int = 20
    lambda0: float = 0.6
    adapt_window: int = 10
    estimate_sigma_hat: bool = False
    benchmark_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not 0.0 < self.p0 < 1.0:
            raise ValueError("p0 must lie in (0, 1)")
        if self.N < 10:
            raise ValueError("N must be >= 10")
        ns = self.N * self.p0
        if abs(ns - round(ns)) > 1e-9 or round(ns) < 1:
            raise ValueError("N*p0 must be a positive integer")
        if self.N % int(round(ns)):
            raise ValueError("N must be a multiple of N*p0")
        if self.max_levels < 1:
            raise ValueError("max_levels must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def n_seeds(self):
        return int(round(self.N * self.p0))

    @property
    def is_local(self):
        return self.mode != "standard"

    def policy(self):
        return RefinementPolicy(self.gamma_T, self.beta0, self.beta1, self.beta2,
                                self.max_refines_per_step, self.pool_size)

    def correction(self):
        return CorrectionConfig(self.delta_N, self.eps_threshold, self.eps_probability)

    def to_dict(self):
        return asdict(self)


@dataclass
class LevelRecord:
    j: int
    c_in: float  # threshold defining this level's domain (inf at level 0)
    c: float  # threshold estimated from this level's samples
    X: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)
    is_true: np.ndarray = field(repr=False)
    seeds: Optional[np.ndarray] = field(default=None, repr=False)
    n_true: int = 0
    n_surrogate: int = 0
    acceptance: float = float("nan")
    p: float = float("nan")
    gamma: float = 0.0
    delta: float = float("nan")
    correction_evals: int = 0

    def summary(self):
        return {
            "j": self.j,
            "c": float(self.c),
            "p": float(self.p),
            "n_true": int(self.n_true),
            "n_surrogate": int(self.n_surrogate),
            "correction_evals": int(self.correction_evals),
            "acceptance": None if math.isnan(self.acceptance) else float(self.acceptance),
            "gamma": float(self.gamma),
            "delta": None if math.isnan(self.delta) else float(self.delta),
        }


@dataclass
class RunResult:
    pf: float
    L: int
    levels: list = field(repr=False)
    n_total: int = 0
    n0: int = 0
    cov_independent: float = float("nan")
    cov_correlated: float = float("nan")
    wall_time: float = 0.0
    config: Optional[RunConfig] = field(default=None, repr=False)
    n_fits: int = 0

    @property
    def thresholds(self):
        return [lv.c for lv in self.levels]

    @property
    def n_surrogate(self):
        return sum(lv.n_surrogate for lv in self.levels)

    def to_dict(self):
        """JSON-ready record; wall time is left out so reruns are byte-identical."""
        return {
            "version": __version__,
            "config": self.config.to_dict() if self.config else None,
            "pf": self.pf,
            "L": self.L,
            "n_total": self.n_total,
            "n0": self.n0,
            "n_surrogate": self.n_surrogate,
            "cov_independent": _nan_none(self.cov_independent),
            "cov_correlated": _nan_none(self.cov_correlated),
            "thresholds": [float(c) for c in self.thresholds],
            "levels": [lv.summary() for lv in self.levels],
        }


def _nan_none(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else float(x)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def expected_levels(pf, p0):
    if not (0 < pf < 1 and 0 < p0 < 1):
        raise ValueError("pf and p0 must lie in (0, 1)")
    ratio = math.log(pf) / math.log(p0)
    # exact powers of p0 should not drop a level to round-off
    return int(math.floor(ratio + 1e-9))


def total_evaluations(N, p0, L):
    if L < 1:
        raise ValueError("L must be >= 1")
    return int(round(N + N * (1.0 - p0) * (L - 1)))


def level_cov(P_j, N, gamma_j=0.0):
    if not 0 < P_j <= 1:
        raise ValueError("P_j must lie in (0, 1]")
    return math.sqrt((1.0 - P_j) / (N * P_j) * (1.0 + gamma_j))


def chain_autocorrelation(indicators, P_j):
    """Correlation factor gamma from an ``(N_s, n)`` array of chain indicators.

    Returns ``(gamma, degenerate)``; ``degenerate`` is set when
    ``P_j (1 - P_j) = 0`` and gamma is reported as 0.
    """
    I = np.atleast_2d(np.asarray(indicators, dtype=float))
    Ns, n = I.shape
    N = Ns * n
    var = P_j * (1.0 - P_j)
    if var <= 0:
        return 0.0, True
    gamma = 0.0
    for k in range(1, n):
        Rk = np.sum(I[:, :-k] * I[:, k:]) / (N - k * Ns) - P_j * P_j
        gamma += (1.0 - k * Ns / N) * Rk / var
    return 2.0 * gamma, False


def total_cov(deltas, mode="independent"):
    deltas = np.asarray(deltas, dtype=float)
    if mode == "independent":
        return float(np.sqrt(np.sum(deltas * deltas)))
    if mode == "correlated":
        return float(np.sum(deltas))
    raise ValueError("mode must be 'independent' or 'correlated'")


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def _make_surrogate(config, design, g, d, factory):
    high_dim = d > 20 if config.high_dim is None else config.high_dim
    N0 = config.N0 or default_N0(d, high_dim)
    if factory is not None:
        return factory(design, N0, g)
    return SURROGATES[config.mode](design, N0)


def _level_zero(config, g, d, rng, ctl_rng, design, surrogate, policy):
    X = lhs_sample(config.N, d, rng)
    if not config.is_local:
        return X, g.evaluate_many(X), np.ones(config.N, dtype=bool)
    M = int(math.ceil(config.warm_start_fraction * config.N))
    G = np.empty(config.N)
    is_true = np.zeros(config.N, dtype=bool)
    for i in range(config.N):
        smp = local_start(X[i], design, g, surrogate, policy, i, M)
        G[i] = smp.value
        is_true[i] = smp.is_true
    return X, G, is_true


def _run_chains(config, g, lv, c, c_prev, j, params, rng, ctl_rng, design, surrogate, policy):
    """Grow ``N_s`` chains from the seeds of ``lv`` inside ``{g <= c}``."""
    Ns = config.n_seeds
    n = config.N // Ns
    d = lv.X.shape[1]
    order = lv.seeds[rng.permutation(Ns)]
    X = np.empty((config.N, d))
    G = np.empty(config.N)
    T = np.zeros(config.N, dtype=bool)
    stats = ChainStats()
    total = ChainStats()
    adapt_index = 0
    info = StepInfo()
    for k, s_idx in enumerate(order):
        row = k * n
        cur = Sample(lv.X[s_idx], float(lv.G[s_idx]), bool(lv.is_true[s_idx]))
        X[row], G[row], T[row] = cur.coords, cur.value, cur.is_true
        for s in range(1, n):
            v = propose(cur.coords, params, rng)
            if config.is_local:
                ctx = LevelContext(c, c_prev, j, s)
                nxt, _ = local_step(v, cur, design, ctx, surrogate, g, policy, ctl_rng, info)
            else:
                y = g(v)
                nxt = Sample(v, y, True) if y <= c else cur
            accepted = nxt is not cur
            stats.record(accepted)
            total.record(accepted)
            cur = nxt
            X[row + s], G[row + s], T[row + s] = cur.coords, cur.value, cur.is_true
        if (k + 1) % params.adapt_window == 0:
            adapt_index += 1
            params = adapt(params, stats, adapt_index)
    return X, G, T, params, total.rate


def run(config, limit_state=None, surrogate_factory=None):
    """Estimate the failure probability for ``config``.

    ``limit_state`` overrides the benchmark lookup; ``surrogate_factory`` is
    a callable ``(design, N0, g) -> surrogate`` replacing the mode's default.
    """
    t0 = time.perf_counter()
    g = limit_state
    if g is None:
        g = make_limit_state(config.benchmark, config.d, **config.benchmark_params)
    d = g.dim
    calls0 = g.calls
    rng = RngStream(config.seed, PROPOSAL_STREAM)
    ctl_rng = RngStream(config.seed, CONTROLLER_STREAM)
    policy = config.policy()
    ccfg = config.correction()
    p0, N, Ns = config.p0, config.N, config.n_seeds

    design = surrogate = None
    if config.is_local:
        design = DesignSet(d)
        surrogate = _make_surrogate(config, design, g, d, surrogate_factory)

    X, G, T = _level_zero(config, g, d, rng, ctl_rng, design, surrogate, policy)
    lv = LevelRecord(0, math.inf, math.nan, X, G, T)
    lv.n_true = g.calls - calls0
    levels = []
    params = ProposalParams.initial(d, config.lambda0, adapt_window=config.adapt_window)
    c_prev = math.inf
    n0 = None
    while True:
        calls_before_fix = g.calls
        if config.is_local:
            res = fix_intermediate_threshold(lv.X, lv.G, lv.is_true, g, p0, ccfg, design)
            c = res.value
        else:
            c = quantile_midpoint(lv.G, p0)
        lv.c = c
        final = c <= 0.0
        if final and config.is_local:
            fix_final_probability(lv.X, lv.G, lv.is_true, g, N, ccfg, design)
        lv.correction_evals = g.calls - calls_before_fix
        lv.n_true += lv.correction_evals
        lv.n_surrogate = int(np.count_nonzero(~lv.is_true))
        if n0 is None:
            n0 = g.calls - calls0
        levels.append(lv)
        if final:
            lv.p = float(np.count_nonzero(lv.G <= 0.0)) / N
            _level_diagnostics(lv, 0.0, Ns, N)
            break
        lv.p = Ns / N
        _level_diagnostics(lv, c, Ns, N)
        diag = {"thresholds": [x.c for x in levels], "evaluations": g.calls - calls0}
        if c >= c_prev:
            raise SubsetSimulationError(
                f"threshold stagnated at level {lv.j} ({c:.6g} >= {c_prev:.6g})", diag)
        if lv.j + 1 > config.max_levels:
            raise SubsetSimulationError(
                f"no convergence within {config.max_levels} levels (threshold {c:.6g})", diag)
        lv.seeds = np.argsort(lv.G, kind="stable")[:Ns]
        if config.estimate_sigma_hat:
            params = params.with_lambda(params.lam, seed_spread(lv.X[lv.seeds]))
        j = lv.j + 1
        calls_before = g.calls
        X, G, T, params, acc = _run_chains(config, g, lv, c, c_prev, j, params, rng, ctl_rng,
                                           design, surrogate, policy)
        c_prev = c
        lv = LevelRecord(j, c, math.nan, X, G, T, acceptance=acc)
        lv.n_true = g.calls - calls_before

    L = len(levels)
    pf = p0 ** (L - 1) * levels[-1].p
    deltas = [lv.delta for lv in levels]
    return RunResult(
        pf=pf,
        L=L,
        levels=levels,
        n_total=g.calls - calls0,
        n0=n0,
        cov_independent=total_cov(deltas, "independent") if pf > 0 else math.nan,
        cov_correlated=total_cov(deltas, "correlated") if pf > 0 else math.nan,
        wall_time=time.perf_counter() - t0,
        config=config,
        n_fits=getattr(surrogate, "n_fits", 0),
    )


def _level_diagnostics(lv, c, Ns, N):
    if lv.p <= 0:
        lv.delta = math.nan
        return
    if lv.j == 0:
        lv.gamma = 0.0
    else:
        ind = (lv.G <= c).reshape(Ns, N // Ns)
        lv.gamma, _ = chain_autocorrelation(ind, lv.p)
    lv.delta = level_cov(lv.p, N, lv.gamma)
