"""Benchmark limit-state functions behind a counted black-box interface.

All functions work on standard-normal inputs and accept either one point of
shape ``(d,)`` or a batch of shape ``(n, d)``. Failure is ``g <= 0``.
"""

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import RngStream, standard_normal_matrix


class EvaluationError(RuntimeError):
    """A limit-state evaluation produced a non-finite value."""

    def __init__(self, message, theta):
        super().__init__(message)
        self.theta = np.array(theta, copy=True)


class LimitState:
    """Counted wrapper around a vectorised limit-state function.

    ``calls`` grows by one per evaluated point, whether the point came through
    ``__call__`` or ``evaluate_many``. ``raw`` bypasses the counter and is
    meant for reference computations only.
    """

    def __init__(self, name, dim, batch_fn, reference_pf=None, description=""):
        self.name = name
        self.dim = int(dim)
        self._fn = batch_fn
        self.reference_pf = reference_pf
        self.description = description
        self._calls = 0
        self._lock = threading.Lock()

    def __repr__(self):
        return f"LimitState({self.name!r}, dim={self.dim}, calls={self._calls})"

    @property
    def calls(self):
        return self._calls

    def reset_counter(self):
        with self._lock:
            self._calls = 0

    def raw(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.dim:
            raise ValueError(f"{self.name} expects dimension {self.dim}, got {theta.shape[-1]}")
        if theta.ndim == 1:
            return float(self._fn(theta[None, :])[0])
        return np.asarray(self._fn(theta), dtype=float)

    def __call__(self, theta):
        value = self.raw(theta)
        with self._lock:
            self._calls += 1
        if not math.isfinite(value):
            raise EvaluationError(f"{self.name} returned {value}", theta)
        return value

    def evaluate_many(self, thetas):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        values = self.raw(thetas)
        with self._lock:
            self._calls += len(thetas)
        bad = ~np.isfinite(values)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise EvaluationError(f"{self.name} returned {values[i]}", thetas[i])
        return values


# ---------------------------------------------------------------------------
# analytic benchmarks
# ---------------------------------------------------------------------------

def g11(theta, beta=4.0):
    """Linear limit state ``beta - sum(theta)/sqrt(d)``; P_F = Phi(-beta)."""
    theta = np.asarray(theta, dtype=float)
    d = theta.shape[-1]
    return beta - theta.sum(axis=-1) / math.sqrt(d)


def g12(theta, kappa=0.2, beta=4.0):
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] < 2:
        raise ValueError("g12 needs d >= 2")
    diff = theta[..., 0] - theta[..., 1]
    return g11(theta, beta) - 0.25 * kappa * diff * diff


def g2_four_branch(theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != 2:
        raise ValueError("the four-branch system is two-dimensional")
    x1, x2 = theta[..., 0], theta[..., 1]
    quad = 3.0 + 0.1 * (x1 - x2) ** 2
    s = (x1 + x2) / math.sqrt(2.0)
    lin = 7.0 / math.sqrt(2.0)
    return np.minimum(np.minimum(quad - s, quad + s),
                      np.minimum(x1 - x2 + lin, x2 - x1 + lin))


def g3_hypersphere(theta, tau=5.26, nu=2.0):
    theta = np.asarray(theta, dtype=float)
    r = np.sqrt(np.sum(theta * theta, axis=-1)) / tau
    rn = r**nu
    return 1.0 - r * r - theta[..., 0] / tau * (1.0 - rn) / (1.0 + rn)


# ---------------------------------------------------------------------------
# hysteretic oscillator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OscillatorConfig:
    m0: float = 6e4
    a0: float = 5e6
    zeta: float = 0.05
    u_y: float = 0.04
    alpha: float = 0.1
    S0: float = 0.03
    d: int = 300
    w_cut: float = 15 * math.pi
    t_end: float = 8.0
    n_time: int = 110
    failure_offset: float = 0.3
    substeps: int = 128
    bw_beta: float = 0.5
    bw_gamma: float = 0.5
    bw_n: float = 1.0

    def __post_init__(self):
        if self.d % 2:
            raise ValueError("oscillator dimension must be even")

    @property
    def delta_w(self):
        return 2.0 * self.w_cut / self.d

    @property
    def S_w(self):
        return math.sqrt(2.0 * self.S0 * self.delta_w)

    @property
    def damping(self):
        return 2.0 * self.m0 * self.zeta * math.sqrt(self.a0 / self.m0)

    @property
    def n_steps(self):
        return self.n_time * self.substeps

    @property
    def h(self):
        return self.t_end / self.n_steps

    @property
    def frequencies(self):
        return self.delta_w * np.arange(1, self.d // 2 + 1)

    def time_grid(self):
        """The loading grid used for the PCA reduction."""
        return np.linspace(0.0, self.t_end, self.n_time)


def loading_psi(theta, cfg, t):
    """White-noise loading evaluated directly from its Fourier sum."""
    theta = np.asarray(theta, dtype=float)
    t = np.asarray(t, dtype=float)
    half = cfg.d // 2
    phase = np.multiply.outer(t, cfg.frequencies)
    total = np.cos(phase) @ theta[..., :half].T + np.sin(phase) @ theta[..., half:].T
    return -cfg.m0 * cfg.S_w * total


def _half_step_loads(thetas, cfg):
    """Loads at every RK4 stage time ``k*h/2`` for a batch of coefficients.

    With w_n = n*dw and stage spacing h/2, dw*h/2 = 2*pi/M for an integer M,
    so the Fourier sum over the whole history is one inverse real FFT.
    """
    nk = 2 * cfg.n_steps + 1
    ratio = 2.0 * math.pi / (cfg.delta_w * cfg.h / 2.0)
    M = int(round(ratio))
    if abs(ratio - M) > 1e-6 * M or M < nk or M <= cfg.d:
        return loading_psi(thetas, cfg, np.arange(nk) * cfg.h / 2.0).T
    half = cfg.d // 2
    spec = np.zeros((thetas.shape[0], M // 2 + 1), dtype=complex)
    spec[:, 1 : half + 1] = thetas[:, :half] - 1j * thetas[:, half:]
    psi = np.fft.irfft(spec, M, axis=1)[:, :nk] * (M / 2.0)
    return np.ascontiguousarray(-cfg.m0 * cfg.S_w * psi)


def integrate_oscillator(loads, cfg, alpha=None):
    """Displacement at ``t_end`` for loads tabulated at half-step times."""
    a = cfg.alpha if alpha is None else alpha
    return _kernels.bouc_wen(np.ascontiguousarray(loads, dtype=float), cfg.h,
                             cfg.m0, cfg.damping, cfg.a0, a, cfg.u_y,
                             cfg.bw_beta, cfg.bw_gamma, cfg.bw_n)


def g4_oscillator(theta, cfg=OscillatorConfig(), chunk=256):
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim == 1
    thetas = np.atleast_2d(theta)
    if thetas.shape[1] != cfg.d:
        raise ValueError(f"oscillator expects {cfg.d} coefficients")
    out = np.empty(len(thetas))
    for start in range(0, len(thetas), chunk):
        block = thetas[start : start + chunk]
        out[start : start + chunk] = integrate_oscillator(_half_step_loads(block, cfg), cfg)
    out += cfg.failure_offset
    return float(out[0]) if single else out


@dataclass
class LoadingPCA:
    """Principal components of the loading sampled on the coarse time grid."""

    cfg: OscillatorConfig
    times: np.ndarray
    mean: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    comp_mean: np.ndarray
    comp_std: np.ndarray
    limit_state: "LimitState" = field(default=None, repr=False)

    @property
    def dim(self):
        return len(self.times)

    def explained_fraction(self):
        return np.cumsum(self.eigvals) / np.sum(self.eigvals)

    def project(self, psi):
        """Loading on the grid -> standardised component coordinates."""
        xi = (np.asarray(psi) - self.mean) @ self.eigvecs
        return (xi - self.comp_mean) / self.comp_std

    def reconstruct(self, eta):
        """Standardised component coordinates -> loading on the grid."""
        xi = self.comp_mean + self.comp_std * np.asarray(eta)
        return self.mean + xi @ self.eigvecs.T

    def evaluate(self, eta):
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        psi = self.reconstruct(eta)
        t_stage = np.arange(2 * self.cfg.n_steps + 1) * self.cfg.h / 2.0
        # linear interpolation of the grid loading at each stage time
        pos = np.interp(t_stage, self.times, np.arange(len(self.times)))
        left = np.minimum(pos.astype(int), len(self.times) - 2)
        frac = pos - left
        loads = psi[:, left] * (1.0 - frac) + psi[:, left + 1] * frac
        return integrate_oscillator(loads, self.cfg) + self.cfg.failure_offset


def pca_loading_reduction(cfg=OscillatorConfig(), n_realizations=5000, rng=None):
    if n_realizations < cfg.n_time:
        raise ValueError("need at least as many realisations as grid points")
    rng = RngStream(0) if rng is None else rng
    times = cfg.time_grid()
    thetas = standard_normal_matrix(n_realizations, cfg.d, rng)
    psi = loading_psi(thetas, cfg, times).T
    mean = psi.mean(axis=0)
    cov = np.cov(psi, rowvar=False)
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() < -1e-10 * max(vals.max(), 1e-300):
        raise np.linalg.LinAlgError("loading covariance is not positive semidefinite")
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    xi = (psi - mean) @ vecs
    comp_mean = xi.mean(axis=0)
    comp_std = xi.std(axis=0, ddof=1)
    comp_std = np.where(comp_std > 0, comp_std, 1.0)
    pca = LoadingPCA(cfg, times, mean, vals, vecs, comp_mean, comp_std)
    pca.limit_state = LimitState(
        "oscillator-pca", len(times), pca.evaluate,
        description="hysteretic oscillator driven by PCA loading components",
    )
    return pca


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

BENCHMARKS = {
    "g11": ("linear limit state, P_F = Phi(-beta)", 2),
    "g12": ("linear limit state with quadratic term in theta_1 - theta_2", 2),
    "g2": ("four-branch series system", 2),
    "g3": ("hypersphere of radius tau", 2),
    "oscillator": ("Bouc-Wen oscillator under white-noise loading", 300),
    "oscillator-pca": ("oscillator driven by PCA loading components", 110),
}

REFERENCE_PF = {
    "g11": 3.17e-5,
    "g12": 6.41e-5,
    "g2": 2.26e-3,
    "g3": 1e-6,
    "oscillator": 8.3e-4,
    "oscillator-pca": 8.3e-4,
}


def make_limit_state(name, d=None, **params):
    """Build a counted benchmark by id, e.g. ``make_limit_state("g11", d=100)``."""
    if name not in BENCHMARKS:
        raise KeyError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}")
    dim = BENCHMARKS[name][1] if d is None else int(d)
    ref = REFERENCE_PF[name]
    if name == "g11":
        beta = params.pop("beta", 4.0)
        fn = lambda x: g11(x, beta)
        ref = float(0.5 * math.erfc(beta / math.sqrt(2.0)))
    elif name == "g12":
        kappa = params.pop("kappa", 0.2)
        beta = params.pop("beta", 4.0)
        if dim < 2:
            raise ValueError("g12 needs d >= 2")
        fn = lambda x: g12(x, kappa, beta)
        if kappa != 0.2 or beta != 4.0:
            ref = None
    elif name == "g2":
        if dim != 2:
            raise ValueError("g2 is two-dimensional")
        fn = g2_four_branch
    elif name == "g3":
        tau = params.pop("tau", 5.26)
        nu = params.pop("nu", 2.0)
        fn = lambda x: g3_hypersphere(x, tau, nu)
        if tau != 5.26 or dim != 2:
            ref = None
    elif name == "oscillator":
        cfg = OscillatorConfig(d=dim, **params)
        params = {}
        fn = lambda x: g4_oscillator(x, cfg)
    else:
        seed = params.pop("pca_seed", 0)
        n_real = params.pop("n_realizations", 5000)
        cfg = OscillatorConfig(**params)
        params = {}
        pca = pca_loading_reduction(cfg, n_real, RngStream(seed, 99))
        if d is not None and dim != pca.dim:
            raise ValueError(f"oscillator-pca has dimension {pca.dim}")
        pca.limit_state.reference_pf = ref
        return pca.limit_state
    if params:
        raise KeyError(f"unknown parameters for {name}: {sorted(params)}")
    return LimitState(name, dim, fn, reference_pf=ref, description=BENCHMARKS[name][0])
