"""Local surrogates: Gaussian-process regression and a quadratic fallback.

The GP uses a constant trend and an anisotropic squared-exponential kernel.
Inputs are standardised on the local training set; length-scales are found
by maximising the concentrated likelihood over a box in log space.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import _kernels

N_STARTS = 5
MAX_EVALS = 200
LS_BOX = (1e-2, 1e2)
START_FACTORS = (0.1, 0.3, 1.0, 3.0, 10.0)


@dataclass(frozen=True)
class Prediction:
    mu: float
    sigma: float

    @property
    def lower(self):
        return self.mu - 1.96 * self.sigma

    @property
    def upper(self):
        return self.mu + 1.96 * self.sigma


def kernel(x1, x2, lengthscales):
    """Squared-exponential correlation ``exp(-0.5 * sum(((x1 - x2)/l)^2))``."""
    r = (np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)) / np.asarray(lengthscales, dtype=float)
    return float(np.exp(-0.5 * np.sum(r * r)))


def _standardize(X):
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return center, scale


def _corr(A, B, inv_ls):
    Za = A * inv_ls
    Zb = B * inv_ls
    D = (np.sum(Za * Za, axis=1)[:, None] + np.sum(Zb * Zb, axis=1)[None, :]
         - 2.0 * Za @ Zb.T)
    return np.exp(-0.5 * np.maximum(D, 0.0))


def search_box(Xs):
    span = np.ptp(Xs, axis=0)
    span = np.where(span > 0, span, 1.0)
    return np.log(LS_BOX[0] * span), np.log(LS_BOX[1] * span), span


def profile_log_likelihood(Xs, Y, log_ls):
    """Concentrated log-likelihood (up to constants) in standardised inputs."""
    nll, _ = _kernels.gp_nll(np.ascontiguousarray(Xs, dtype=float),
                             np.ascontiguousarray(Y, dtype=float),
                             np.ascontiguousarray(log_ls, dtype=float))
    return -nll


class GPModel:
    """Fitted noise-free GP; immutable after construction."""

    def __init__(self, X, Y, center, scale, log_ls, nugget, constant=False):
        self.X = np.array(X, dtype=float)
        self.Y = np.array(Y, dtype=float)
        self.center = center
        self.scale = scale
        self.Xs = (self.X - center) / scale
        self.log_ls = np.asarray(log_ls, dtype=float)
        self.lengthscales = np.exp(self.log_ls) * scale
        self.nugget = nugget
        self.constant = constant
        self.log_likelihood = None
        if constant:
            self.beta = float(self.Y.mean())
            self.sigma2 = 0.0
            return
        n = len(self.Y)
        self._inv_ls = np.exp(-self.log_ls)
        K = _corr(self.Xs, self.Xs, self._inv_ls)
        np.fill_diagonal(K, 1.0)
        while True:
            try:
                self._L = np.linalg.cholesky(K + nugget * np.eye(n))
                break
            except np.linalg.LinAlgError:
                nugget *= 10.0
                if nugget > _kernels.NUGGET_MAX * 1.000001:
                    raise
        self.nugget = nugget
        a = solve_triangular(self._L, np.ones(n), lower=True)
        b = solve_triangular(self._L, self.Y, lower=True)
        self._a = a
        self._one_k_one = float(a @ a)
        self.beta = float(a @ b) / self._one_k_one
        r = b - self.beta * a
        self.sigma2 = float(r @ r) / n
        # K^-1 (Y - beta)
        self._alpha = solve_triangular(self._L.T, r, lower=False)
        logdet = 2.0 * np.sum(np.log(np.diag(self._L)))
        if self.sigma2 > 0:
            self.log_likelihood = -0.5 * (n * math.log(self.sigma2) + logdet)

    @property
    def dim(self):
        return self.X.shape[1]

    def variance_raw(self, V):
        """Predictive variance before clamping (can dip below zero by round-off)."""
        V = np.atleast_2d(np.asarray(V, dtype=float))
        if self.constant:
            return np.zeros(len(V))
        Vs = (V - self.center) / self.scale
        Kq = _corr(Vs, self.Xs, self._inv_ls)
        A = solve_triangular(self._L, Kq.T, lower=True)
        kk = np.sum(A * A, axis=0)
        u = self._a @ A - 1.0
        return self.sigma2 * (1.0 - kk + u * u / self._one_k_one)

    def predict_many(self, V):
        V = np.atleast_2d(np.asarray(V, dtype=float))
        if self.constant:
            return np.full(len(V), self.beta), np.zeros(len(V))
        Vs = (V - self.center) / self.scale
        Kq = _corr(Vs, self.Xs, self._inv_ls)
        mu = self.beta + Kq @ self._alpha
        A = solve_triangular(self._L, Kq.T, lower=True)
        kk = np.sum(A * A, axis=0)
        u = self._a @ A - 1.0
        var = self.sigma2 * (1.0 - kk + u * u / self._one_k_one)
        return mu, np.sqrt(np.maximum(var, 0.0))

    def predict(self, v):
        mu, sd = self.predict_many(np.asarray(v, dtype=float)[None, :])
        return Prediction(float(mu[0]), float(sd[0]))


def fit_gp(X, Y, lengthscales=None, max_evals=MAX_EVALS):
    """Fit a local GP.

    With ``lengthscales`` given (in original input units) the likelihood
    search is skipped. Constant ``Y`` yields a flagged constant model with
    zero process variance.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).ravel()
    if len(X) != len(Y):
        raise ValueError("X and Y lengths differ")
    if len(Y) < 2:
        raise ValueError("a GP fit needs at least two points")
    center, scale = _standardize(X)
    p = X.shape[1]
    if np.ptp(Y) <= 1e-12 * max(1.0, float(np.max(np.abs(Y)))):
        return GPModel(X, Y, center, scale, np.zeros(p), 0.0, constant=True)
    Xs = np.ascontiguousarray((X - center) / scale)
    if lengthscales is not None:
        log_ls = np.log(np.broadcast_to(np.asarray(lengthscales, dtype=float), (p,)) / scale)
        nll, nugget = _kernels.gp_nll(Xs, Y, np.ascontiguousarray(log_ls))
        if not np.isfinite(nll):
            raise np.linalg.LinAlgError("kernel matrix singular at the given length-scales")
        return GPModel(X, Y, center, scale, log_ls, nugget)
    lo, hi, span = search_box(Xs)
    starts = np.log(np.outer(START_FACTORS[:N_STARTS], span))
    best, best_f, _ = _kernels.gp_mle(Xs, Y, starts, lo, hi, max_evals)
    if not np.isfinite(best_f):
        raise np.linalg.LinAlgError("no length-scales in the search box give a usable kernel matrix")
    _, nugget = _kernels.gp_nll(Xs, Y, best)
    model = GPModel(X, Y, center, scale, best, nugget)
    model.search_box = (lo, hi)
    return model


def predict(model, v):
    return model.predict(v)


# ---------------------------------------------------------------------------
# quadratic regression fallback
# ---------------------------------------------------------------------------

def quadratic_basis(X, full=True):
    X = np.atleast_2d(X)
    n, d = X.shape
    cols = [np.ones(n)] + [X[:, i] for i in range(d)]
    if full:
        for i in range(d):
            for j in range(i, d):
                cols.append(X[:, i] * X[:, j])
    return np.column_stack(cols)


class QuadraticModel:
    """Least-squares polynomial with a constant leave-one-out error bar."""

    def __init__(self, center, scale, coef, full, sigma):
        self.center = center
        self.scale = scale
        self.coef = coef
        self.full = full
        self.sigma = sigma

    def predict_many(self, V):
        V = np.atleast_2d(np.asarray(V, dtype=float))
        B = quadratic_basis((V - self.center) / self.scale, self.full)
        return B @ self.coef, np.full(len(V), self.sigma)

    def predict(self, v):
        mu, sd = self.predict_many(np.asarray(v, dtype=float)[None, :])
        return Prediction(float(mu[0]), float(sd[0]))


def fit_quadratic(X, Y):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).ravel()
    n, d = X.shape
    center, scale = _standardize(X)
    Xs = (X - center) / scale
    for full in (True, False):
        B = quadratic_basis(Xs, full)
        k = B.shape[1]
        if n < k or np.linalg.matrix_rank(B) < k:
            continue
        Q, Rm = np.linalg.qr(B)
        coef = solve_triangular(Rm, Q.T @ Y)
        resid = Y - B @ coef
        lev = np.sum(Q * Q, axis=1)
        keep = lev < 1.0 - 1e-10
        if np.any(keep):
            loo = resid[keep] / (1.0 - lev[keep])
            sigma = float(np.sqrt(np.mean(loo * loo)))
        else:
            # interpolating fit: no residual information
            sigma = math.inf
        return QuadraticModel(center, scale, coef, full, sigma)
    raise np.linalg.LinAlgError("neither a quadratic nor a linear basis is identifiable")
