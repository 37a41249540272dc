"""Random streams, standard-normal machinery, LHS designs and the design set."""

import threading
from typing import NamedTuple, Optional

import numpy as np
from scipy import linalg as sla
from scipy import special

from . import _kernels

DUPLICATE_TOL = 1e-12


class Sample(NamedTuple):
    """A point in standard-normal space with its working limit-state value."""

    coords: np.ndarray
    value: Optional[float] = None
    is_true: bool = False


class RngStream:
    """Reproducible random stream addressed by ``(seed, stream_id)``.

    Streams with different ids are statistically independent (the pair is fed
    to numpy's ``SeedSequence``), so every run, chain family or controller can
    own its stream without coordinating draws.
    """

    def __init__(self, seed, stream_id=0):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence([self.seed, self.stream_id])
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, size=None):
        return self.generator.random(size)

    def permutation(self, n):
        return self.generator.permutation(n)


def standard_normal_matrix(n, d, rng):
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    return rng.normal((n, d))


def normal_cdf(x):
    return special.ndtr(x)


def inv_normal_cdf(u):
    """Standard-normal quantile; raises ``ValueError`` outside (0, 1)."""
    arr = np.asarray(u, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise ValueError("inverse normal CDF is defined on the open interval (0, 1)")
    out = special.ndtri(arr)
    return float(out) if np.ndim(u) == 0 else out


def lhs_unit(N, d, rng):
    """Latin hypercube in [0, 1)^d: one uniform point per stratum, columns permuted."""
    if N < 2:
        raise ValueError("LHS needs N >= 2")
    jitter = rng.uniform((N, d))
    strata = np.empty((N, d))
    for k in range(d):
        strata[:, k] = rng.permutation(N)
    return (strata + jitter) / N


def lhs_sample(N, d, rng):
    u = lhs_unit(N, d, rng)
    # a zero jitter in the lowest stratum would map to -inf
    u = np.clip(u, np.finfo(float).tiny, np.nextafter(1.0, 0.0))
    return special.ndtri(u)


def indicator(g_value, c=0.0):
    if np.ndim(g_value) == 0:
        return int(g_value <= c)
    return (np.asarray(g_value) <= c).astype(int)


def spd_factor(A, jitter=0.0, max_jitter=None):
    """Cholesky factor of a symmetric positive-definite matrix.

    When ``max_jitter`` is given, a failing factorization is retried with the
    diagonal jitter escalated tenfold (starting from ``jitter`` or 1e-12 of the
    mean diagonal) until it succeeds or exceeds ``max_jitter``.
    Returns ``(factor, jitter_used)`` in scipy ``cho_factor`` form.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    current = jitter
    while True:
        try:
            M = A if current == 0.0 else A + current * np.eye(n)
            return sla.cho_factor(M, lower=True, check_finite=False), current
        except np.linalg.LinAlgError:
            if max_jitter is None:
                raise
            if current == 0.0:
                current = 1e-12 * max(np.trace(A) / n, 1e-300)
            else:
                current *= 10.0
            if current > max_jitter:
                raise


def solve_spd(A, b):
    """Solve ``A x = b`` for SPD ``A`` with one step of iterative refinement."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    factor, _ = spd_factor(A)
    x = sla.cho_solve(factor, b, check_finite=False)
    x = x + sla.cho_solve(factor, b - A @ x, check_finite=False)
    return x


def nearest_indices(Z, z, k):
    """Indices of the ``k`` rows of ``Z`` closest to ``z``; ties keep row order."""
    d2 = _kernels.sq_dists(Z, np.ascontiguousarray(z, dtype=float))
    order = np.argsort(d2, kind="stable")[:k]
    return order, d2[order]


class DesignSet:
    """Growing archive of points with true limit-state values.

    Rows are never removed or reordered, so an index stays a stable handle on
    a design point. Near-duplicates (every coordinate within ``tol``) are not
    stored twice; ``add`` returns the index of the existing row instead.
    Reads are safe from several threads; ``add`` serialises on a lock.
    """

    def __init__(self, dim, tol=DUPLICATE_TOL, capacity=256):
        self.dim = int(dim)
        self.tol = tol
        self._X = np.empty((capacity, self.dim))
        self._Y = np.empty(capacity)
        self._n = 0
        self._lock = threading.Lock()

    def __len__(self):
        return self._n

    @property
    def X(self):
        return self._X[: self._n]

    @property
    def Y(self):
        return self._Y[: self._n]

    def find(self, x):
        """Index of a stored duplicate of ``x`` or -1."""
        if self._n == 0:
            return -1
        x = np.asarray(x, dtype=float)
        d2 = _kernels.sq_dists(self.X, x)
        for i in np.flatnonzero(d2 <= self.dim * self.tol**2):
            if np.all(np.abs(self._X[i] - x) <= self.tol):
                return int(i)
        return -1

    def add(self, x, y):
        """Insert ``(x, y)``; returns ``(index, inserted)``."""
        x = np.asarray(x, dtype=float).reshape(self.dim)
        if not np.isfinite(y):
            raise ValueError("design values must be finite")
        with self._lock:
            existing = self.find(x)
            if existing >= 0:
                return existing, False
            if self._n == self._X.shape[0]:
                self._X = np.concatenate([self._X, np.empty_like(self._X)])
                self._Y = np.concatenate([self._Y, np.empty_like(self._Y)])
            self._X[self._n] = x
            self._Y[self._n] = y
            self._n += 1
            return self._n - 1, True

    def add_many(self, X, Y):
        return [self.add(x, y)[0] for x, y in zip(X, Y)]

    def nearest(self, x, k):
        if k > self._n:
            raise ValueError(
                f"design set holds {self._n} points but {k} neighbours were requested; "
                "top up the warm-start design first"
            )
        return nearest_indices(self.X, x, k)
