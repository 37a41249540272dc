"""Local-approximation chain steps and the LHS warm start.

Each step predicts the limit state at the candidate and at the current
state from surrogates fitted on their nearest design points, refines the
design set where the prediction is too uncertain, and falls back to a true
evaluation whenever the classification against the level threshold is in
doubt.
"""

import math
from dataclasses import dataclass

import numpy as np

from .core import Sample, normal_cdf
from .gp import Prediction, fit_gp, fit_quadratic
from .pls import GlobalSubspace, fit_composite

Z95 = 1.96


@dataclass(frozen=True)
class RefinementPolicy:
    gamma_T: float = 0.05
    beta0: float = 1.0
    beta1: float = 0.01
    beta2: float = 2.0
    max_refines_per_step: int = 5
    pool_size: int = 200
    nested_tol: float = 1e-9

    def __post_init__(self):
        if self.gamma_T <= 0:
            raise ValueError("gamma_T must be positive")
        if self.max_refines_per_step < 1:
            raise ValueError("max_refines_per_step must be >= 1")
        if self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")


@dataclass(frozen=True)
class BallQuery:
    center: np.ndarray
    R: float
    members: np.ndarray


@dataclass(frozen=True)
class LevelContext:
    c_j: float
    c_prev: float = math.inf
    j: int = 1
    s: int = 1


def default_N0(d, high_dim=False):
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if high_dim:
        return d + 1
    return int(math.ceil(math.sqrt(d) * (d + 1) * (d + 2) / 2 - 1e-12))


def select_ball(v, design, N0):
    order, d2 = design.nearest(v, N0)
    return BallQuery(np.asarray(v, dtype=float), float(math.sqrt(d2[-1])), order)


def error_indicator(pred):
    if pred.sigma == 0.0:
        return 0.0
    if abs(pred.mu) < 1e-12:
        return math.inf
    return 2.0 * Z95 * pred.sigma / abs(pred.mu)


def random_refine_probability(s, j, policy=RefinementPolicy()):
    if s < 1 or j < 1:
        raise ValueError("s and j start at 1")
    beta = policy.beta1 * float(s) ** (-policy.beta0 * float(j) ** policy.beta2)
    return min(1.0, max(0.0, beta))


def misclassification_probability(mu, sigma, c):
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return 0.5 if mu == c else 0.0
    return float(normal_cdf(-abs(mu - c) / sigma))


def u_function(mu, sigma, c):
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    dist = np.abs(mu - c)
    with np.errstate(divide="ignore", invalid="ignore"):
        U = np.where(sigma > 0, dist / np.where(sigma > 0, sigma, 1.0),
                     np.where(dist == 0, 0.0, np.inf))
    return U


def uniform_ball(center, R, n, rng):
    d = len(center)
    z = rng.normal((n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    radius = R * rng.uniform(n) ** (1.0 / d)
    return center + z * radius[:, None]


def refine_select(ball, model, c, policy, rng, design=None):
    """Pool point in the ball minimising ``|mu - c| / sigma``.

    Returns ``(theta_star, flagged)``; ``flagged`` marks the degenerate case
    where every pool point duplicated the design and the centre was nudged.
    """
    pool = uniform_ball(ball.center, ball.R, policy.pool_size, rng)
    if design is not None and len(design):
        keep = np.array([design.find(p) < 0 for p in pool])
        pool = pool[keep]
    if len(pool) == 0:
        nudge = rng.normal(len(ball.center))
        # step must clear the duplicate tolerance even for a zero-radius ball
        floor = 10.0 * design.tol if design is not None else 1e-12
        nudge *= max(1e-3 * ball.R, floor) / np.linalg.norm(nudge)
        return ball.center + nudge, True
    mu, sd = model.predict_many(pool)
    U = u_function(mu, sd, c)
    if not np.any(np.isfinite(U)):
        return pool[int(np.argmin(np.abs(mu - c)))], False
    return pool[int(np.argmin(U))], False


# ---------------------------------------------------------------------------
# surrogate factories
# ---------------------------------------------------------------------------

class LocalFit:
    __slots__ = ("ball", "model")

    def __init__(self, ball, model):
        self.ball = ball
        self.model = model

    def predict(self, x):
        return self.model.predict(x)

    def predict_many(self, X):
        return self.model.predict_many(X)


class _CachedSurrogate:
    """Fits a model on the ball around a query point, reusing identical fits."""

    cache_size = 4096

    def __init__(self, design, N0):
        self.design = design
        self.N0 = int(N0)
        self._cache = {}
        self.n_fits = 0

    def _fit(self, X, Y):
        raise NotImplementedError

    def _key(self, members):
        return tuple(sorted(members.tolist()))

    def ball(self, x):
        return select_ball(x, self.design, self.N0)

    def fit_at(self, x):
        ball = self.ball(x)
        key = self._key(ball.members)
        model = self._cache.get(key)
        if model is None:
            model = self._fit(self.design.X[ball.members], self.design.Y[ball.members])
            if len(self._cache) >= self.cache_size:
                self._cache.clear()
            self._cache[key] = model
            self.n_fits += 1
        return LocalFit(ball, model)


class GPSurrogate(_CachedSurrogate):
    def _fit(self, X, Y):
        return fit_gp(X, Y)


class QuadraticSurrogate(_CachedSurrogate):
    def _fit(self, X, Y):
        return fit_quadratic(X, Y)


class PLSGPSurrogate(_CachedSurrogate):
    """Global PLS for neighbour search, local PLS + GP for prediction.

    ``N0`` is the pilot neighbourhood (``d + 1`` by default in high
    dimension); the GP itself uses the closest ``max(2r + 10, 3 r_global)``
    of those points.
    """

    def __init__(self, design, N0, subspace=None):
        super().__init__(design, N0)
        self.subspace = GlobalSubspace(design) if subspace is None else subspace

    def ball(self, x):
        x = np.asarray(x, dtype=float)
        order = self.subspace.neighbours(x, self.N0)
        R = float(np.sqrt(np.max(np.sum((self.design.X[order] - x) ** 2, axis=1))))
        return BallQuery(x, R, order)

    def fit_at(self, x):
        ball = self.ball(x)
        key = (self.subspace.version,) + tuple(ball.members.tolist())
        model = self._cache.get(key)
        if model is None:
            model, _ = fit_composite(self.design.X, self.design.Y, ball.members, self.subspace.model)
            if len(self._cache) >= self.cache_size:
                self._cache.clear()
            self._cache[key] = model
            self.n_fits += 1
        return LocalFit(ball, model)


class _ExactModel:
    def __init__(self, fn):
        self.fn = fn

    def predict_many(self, X):
        mu = np.asarray(self.fn(np.atleast_2d(X)), dtype=float)
        return mu, np.zeros(len(mu))

    def predict(self, x):
        return Prediction(float(self.fn(np.asarray(x, dtype=float)[None, :])[0]), 0.0)


class ExactSurrogate(_CachedSurrogate):
    """Zero-error surrogate backed by the uncounted limit state (for testing)."""

    def __init__(self, design, N0, limit_state):
        super().__init__(design, N0)
        self._model = _ExactModel(limit_state.raw)

    def fit_at(self, x):
        return LocalFit(self.ball(x), self._model)


SURROGATES = {
    "local-gp": GPSurrogate,
    "local-quadratic": QuadraticSurrogate,
    "local-pls-gp": PLSGPSurrogate,
}


# ---------------------------------------------------------------------------
# chain step and warm start
# ---------------------------------------------------------------------------

@dataclass
class StepInfo:
    n_true: int = 0
    n_refines: int = 0
    random_refines: int = 0
    budget_exhausted: bool = False
    nested_fallback: bool = False


def _evaluate(g, design, x):
    y = g(x)
    design.add(x, y)
    return y


def local_step(v, prev, design, ctx, surrogate, g, policy, rng, info=None):
    """One surrogate-assisted chain step from ``prev`` (a Sample) to candidate ``v``.

    Returns ``(next_sample, used_true_eval)``. Every true evaluation made
    here is inserted into ``design``.
    """
    info = StepInfo() if info is None else info
    v = np.asarray(v, dtype=float)
    p_coords = np.asarray(prev.coords, dtype=float)
    beta_T = random_refine_probability(ctx.s, ctx.j, policy)
    n_ref = 0
    while True:
        fit_v = surrogate.fit_at(v)
        pred_v = fit_v.predict(v)
        eps_v = error_indicator(pred_v)
        fit_p = surrogate.fit_at(p_coords)
        eps_p = error_indicator(fit_p.predict(p_coords))
        if n_ref >= policy.max_refines_per_step:
            break
        if beta_T > 0 and rng.uniform() < beta_T:
            fit = fit_v if rng.uniform() < 0.5 else fit_p
            c = -ctx.c_j
            info.random_refines += 1
        elif eps_v >= eps_p and eps_v >= policy.gamma_T:
            fit, c = fit_v, 0.0
        elif eps_p > eps_v and eps_p >= policy.gamma_T:
            fit, c = fit_p, 0.0
        else:
            break
        theta, _ = refine_select(fit.ball, fit.model, c, policy, rng, design)
        _evaluate(g, design, theta)
        info.n_true += 1
        n_ref += 1
    info.n_refines += n_ref

    use_true = False
    if eps_v >= policy.gamma_T:
        info.budget_exhausted = True
        use_true = True
    else:
        mu, sd = pred_v.mu, pred_v.sigma
        straddle = sd > 0 and (mu - Z95 * sd) <= ctx.c_j <= (mu + Z95 * sd)
        not_nested = mu <= ctx.c_j and mu > ctx.c_prev + policy.nested_tol
        if straddle or not_nested:
            info.nested_fallback = True
            use_true = True
    if use_true:
        idx = design.find(v)
        if idx >= 0:
            value = float(design.Y[idx])
        else:
            value = _evaluate(g, design, v)
            info.n_true += 1
        candidate = Sample(v, value, True)
    else:
        candidate = Sample(v, pred_v.mu, False)
    if candidate.value <= ctx.c_j:
        return candidate, use_true
    return prev, use_true


def local_start(v0, design, g, surrogate, policy, index, M):
    """Warm-start evaluation of the ``index``-th LHS point.

    The first ``M`` points are evaluated truly. Afterwards a confident
    surrogate stores the upper bound ``mu + 1.96 sigma``; otherwise the point
    is evaluated and added to the design set. Returns a Sample.
    """
    v0 = np.asarray(v0, dtype=float)
    if index >= M and len(design) >= surrogate.N0:
        pred = surrogate.fit_at(v0).predict(v0)
        if error_indicator(pred) < policy.gamma_T:
            return Sample(v0, pred.upper, False)
    return Sample(v0, _evaluate(g, design, v0), True)
