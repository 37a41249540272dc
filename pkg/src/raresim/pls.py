"""PLS1 latent subspaces and the two-stage PLS + GP local surrogate."""

from dataclasses import dataclass, field

import numpy as np

from .gp import Prediction, fit_gp


class PLSError(ValueError):
    pass


@dataclass
class PLSModel:
    mu_X: np.ndarray
    mu_Y: float
    W: np.ndarray  # d x r, unit columns
    P: np.ndarray  # d x r loads
    b: np.ndarray  # r regression coefficients
    H: np.ndarray  # N x r training scores
    R: np.ndarray  # d x r rotation W (P^T W)^-1
    residual_norms: list = field(default_factory=list)
    stalled: bool = False
    eps_y: float = 0.0

    @property
    def converged(self):
        """True when the deflated response met the tolerance."""
        return self.residual_norms[-1] <= self.eps_y

    @property
    def r(self):
        return self.W.shape[1]

    def project(self, X_new):
        return project(self, X_new)

    def predict(self, X_new):
        return self.mu_Y + project(self, X_new) @ self.b


def pls1_fit(X, Y, eps_y=None, r_max=None):
    """NIPALS PLS1.

    Components are extracted until the deflated response norm drops to
    ``eps_y`` (default ``1e-3 * ||Y - mean||``) or ``r_max`` components
    (default ``min(N - 1, 10)``) exist. ``stalled`` is set when the
    cross-covariance vanishes before the tolerance is met.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).ravel()
    n, d = X.shape
    if n < 2 or len(Y) != n:
        raise PLSError("PLS needs at least two paired rows")
    mu_X = X.mean(axis=0)
    mu_Y = float(Y.mean())
    XE = X - mu_X
    YE = Y - mu_Y
    y_norm = np.linalg.norm(YE)
    if y_norm <= 1e-14 * max(1.0, abs(mu_Y)):
        raise PLSError("constant response: nothing to extract")
    if eps_y is None:
        eps_y = 1e-3 * y_norm
    if r_max is None:
        r_max = min(n - 1, 10)
    r_max = max(1, min(r_max, d, n - 1 if n > 1 else 1))
    W, P, B, Hs, norms = [], [], [], [], [y_norm]
    stalled = False
    while len(W) < r_max and norms[-1] > eps_y:
        c = XE.T @ YE
        cn = np.linalg.norm(c)
        if cn <= 1e-14 * y_norm * max(1.0, np.linalg.norm(XE)):
            stalled = True
            break
        w = c / cn
        h = XE @ w
        hh = h @ h
        p = XE.T @ h / hh
        bk = (h @ YE) / hh
        XE = XE - np.outer(h, p)
        YE = YE - bk * h
        W.append(w)
        P.append(p)
        B.append(bk)
        Hs.append(h)
        norms.append(np.linalg.norm(YE))
    if not W:
        raise PLSError("no PLS component could be extracted")
    W = np.column_stack(W)
    P = np.column_stack(P)
    R = W @ np.linalg.inv(P.T @ W)
    return PLSModel(mu_X, mu_Y, W, P, np.array(B), np.column_stack(Hs), R, norms, stalled, eps_y)


def project(model, X_new):
    X_new = np.asarray(X_new, dtype=float)
    if X_new.shape[-1] != len(model.mu_X):
        raise ValueError("column count does not match the PLS model")
    return (X_new - model.mu_X) @ model.R


class GlobalSubspace:
    """PLS subspace of the whole design set, refit after 10% growth.

    Latent coordinates of the design points are cached and extended as the
    design grows, so neighbour queries never re-project the full archive.
    """

    def __init__(self, design, growth=0.10, eps_rel=1e-3, r_max=10):
        self.design = design
        self.growth = growth
        self.eps_rel = eps_rel
        self.r_max = r_max
        self.model = None
        self.version = 0
        self._n_fit = 0
        self._Z = None
        self._n_proj = 0

    def refresh(self):
        n = len(self.design)
        if self.model is None or n > (1.0 + self.growth) * self._n_fit:
            Y = self.design.Y
            yc = np.linalg.norm(Y - Y.mean())
            self.model = pls1_fit(self.design.X, Y, eps_y=self.eps_rel * yc,
                                  r_max=min(n - 1, self.r_max))
            self._n_fit = n
            self._Z = None
            self._n_proj = 0
            self.version += 1
        return self.model

    def latent(self):
        self.refresh()
        n = len(self.design)
        if self._Z is None:
            self._Z = project(self.model, self.design.X)
        elif self._n_proj < n:
            self._Z = np.vstack([self._Z, project(self.model, self.design.X[self._n_proj : n])])
        self._n_proj = n
        return self._Z

    def neighbours(self, v, k):
        Z = self.latent()
        zv = project(self.model, v)
        d2 = np.sum((Z - zv) ** 2, axis=1)
        order = np.argsort(d2, kind="stable")[:k]
        return order


class CompositeModel:
    """GP on PLS latent coordinates; predicts from full-space inputs."""

    def __init__(self, pls_model, gp_model, fallback=False):
        self.pls = pls_model
        self.gp = gp_model
        self.fallback = fallback

    @property
    def r(self):
        return self.pls.r

    def predict_many(self, V):
        return self.gp.predict_many(project(self.pls, np.atleast_2d(V)))

    def predict(self, v):
        mu, sd = self.predict_many(np.asarray(v, dtype=float)[None, :])
        return Prediction(float(mu[0]), float(sd[0]))


def gp_size(r_local, r_global, n_pilot):
    return int(min(max(2 * r_local + 10, 3 * r_global), n_pilot))


def fit_composite(X, Y, order, global_model, eps_rel=1e-3):
    """Local PLS on the pilot neighbours ``order`` then a GP on latent scores.

    ``order`` lists the pilot rows nearest first. If the local PLS fit
    degenerates (constant response, vanishing covariance, or the residual
    tolerance not reached within ``r_max`` components) the GP is built in
    the global subspace instead and the model is flagged.
    """
    Xp, Yp = X[order], Y[order]
    try:
        yc = np.linalg.norm(Yp - Yp.mean())
        local = pls1_fit(Xp, Yp, eps_y=eps_rel * yc, r_max=min(len(order) - 1, 10))
        fallback = local.stalled or not local.converged
    except PLSError:
        fallback = True
    if fallback:
        local = global_model
    n_gp = gp_size(local.r, global_model.r, len(order))
    sub = order[:n_gp]
    gp_model = fit_gp(project(local, X[sub]), Y[sub])
    return CompositeModel(local, gp_model, fallback), sub


def fit_local_pls_gp(design, v, N0, subspace=None):
    """Two-stage PLS + GP surrogate around ``v``; returns (model, Prediction)."""
    if len(design) < N0:
        raise ValueError("design set smaller than the requested neighbourhood")
    subspace = GlobalSubspace(design) if subspace is None else subspace
    order = subspace.neighbours(np.asarray(v, dtype=float), N0)
    model, _ = fit_composite(design.X, design.Y, order, subspace.model)
    return model, model.predict(v)
