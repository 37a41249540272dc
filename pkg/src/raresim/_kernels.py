"""Hot numeric kernels.

Every kernel exists in two flavours: a numba-compiled loop version and a
pure-numpy version. The public names at the bottom of the module point at
one or the other depending on ``RARESIM_DISABLE_NUMBA`` (set it to ``1`` to
force the numpy path). Both flavours stay importable under explicit
``*_numba`` / ``*_numpy`` names so tests and benchmarks can compare them.
"""

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _numba_disabled():
    flag = os.environ.get("RARESIM_DISABLE_NUMBA", "").strip().lower()
    return flag in ("1", "true", "yes", "on")


HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not _numba_disabled()

NUGGET_BASE = 1e-10
NUGGET_MAX = 1e-4


def _jit(fn, cache=True):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=cache)(fn)


# ---------------------------------------------------------------------------
# squared distances to a query point
# ---------------------------------------------------------------------------

def _sq_dists_loops(X, x):
    n, d = X.shape
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        for k in range(d):
            diff = X[i, k] - x[k]
            acc += diff * diff
        out[i] = acc
    return out


def sq_dists_numpy(X, x):
    diff = X - x
    return np.einsum("ij,ij->i", diff, diff)


# ---------------------------------------------------------------------------
# GP profile likelihood (constant trend, anisotropic squared exponential)
# ---------------------------------------------------------------------------

def _cholesky_inplace(A):
    n = A.shape[0]
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= A[j, k] * A[j, k]
        if not s > 0.0:
            return False
        ljj = math.sqrt(s)
        A[j, j] = ljj
        for i in range(j + 1, n):
            t = A[i, j]
            for k in range(j):
                t -= A[i, k] * A[j, k]
            A[i, j] = t / ljj
    for i in range(n):
        for j in range(i + 1, n):
            A[i, j] = 0.0
    return True


def _forward_sub(L, b):
    n = b.shape[0]
    out = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * out[k]
        out[i] = s / L[i, i]
    return out


def _gp_nll_loops(Xs, Y, log_ls):
    """Negative concentrated log-likelihood; returns (nll, nugget)."""
    n, p = Xs.shape
    inv_ls = np.empty(p)
    for k in range(p):
        inv_ls[k] = math.exp(-log_ls[k])
    K = np.empty((n, n))
    for i in range(n):
        K[i, i] = 1.0
        for j in range(i):
            acc = 0.0
            for k in range(p):
                diff = (Xs[i, k] - Xs[j, k]) * inv_ls[k]
                acc += diff * diff
            v = math.exp(-0.5 * acc)
            K[i, j] = v
            K[j, i] = v
    nugget = NUGGET_BASE
    L = np.empty((n, n))
    ok = False
    while nugget <= NUGGET_MAX * 1.000001:
        for i in range(n):
            for j in range(n):
                L[i, j] = K[i, j]
            L[i, i] += nugget
        if _cholesky_inplace(L):
            ok = True
            break
        nugget *= 10.0
    if not ok:
        return np.inf, nugget
    a = _forward_sub(L, np.ones(n))
    b = _forward_sub(L, Y)
    aa = 0.0
    ab = 0.0
    for i in range(n):
        aa += a[i] * a[i]
        ab += a[i] * b[i]
    beta = ab / aa
    s2 = 0.0
    for i in range(n):
        r = b[i] - beta * a[i]
        s2 += r * r
    s2 /= n
    if not s2 > 0.0:
        return np.inf, nugget
    logdet = 0.0
    for i in range(n):
        logdet += 2.0 * math.log(L[i, i])
    return 0.5 * (n * math.log(s2) + logdet), nugget


def gp_nll_numpy(Xs, Y, log_ls):
    n = Xs.shape[0]
    Z = Xs * np.exp(-log_ls)
    sq = np.sum(Z * Z, axis=1)
    D = np.maximum(sq[:, None] + sq[None, :] - 2.0 * Z @ Z.T, 0.0)
    K = np.exp(-0.5 * D)
    np.fill_diagonal(K, 1.0)
    nugget = NUGGET_BASE
    L = None
    while nugget <= NUGGET_MAX * 1.000001:
        try:
            L = np.linalg.cholesky(K + nugget * np.eye(n))
            break
        except np.linalg.LinAlgError:
            nugget *= 10.0
    if L is None:
        return np.inf, nugget
    from scipy.linalg import solve_triangular

    a = solve_triangular(L, np.ones(n), lower=True)
    b = solve_triangular(L, Y, lower=True)
    beta = (a @ b) / (a @ a)
    r = b - beta * a
    s2 = (r @ r) / n
    if not s2 > 0.0:
        return np.inf, nugget
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return 0.5 * (n * math.log(s2) + logdet), nugget


# ---------------------------------------------------------------------------
# bounded Nelder-Mead over log length-scales
# ---------------------------------------------------------------------------

def _nelder_mead_core(nll, Xs, Y, starts, lo, hi, max_evals):
    """Evaluate every start, then run a box-clipped Nelder-Mead from the best.

    Returns (best log length-scales, best nll, evaluations used).
    """
    p = lo.shape[0]
    n_starts = starts.shape[0]
    best_x = np.minimum(np.maximum(starts[0], lo), hi)
    best_f = np.inf
    evals = 0
    for s in range(n_starts):
        x = np.minimum(np.maximum(starts[s], lo), hi)
        f = nll(Xs, Y, x)[0]
        evals += 1
        if f < best_f:
            best_f = f
            best_x = x
    simplex = np.empty((p + 1, p))
    fvals = np.empty(p + 1)
    simplex[0] = best_x
    fvals[0] = best_f
    for k in range(p):
        x = best_x.copy()
        step = 0.15 * (hi[k] - lo[k])
        if x[k] + step <= hi[k]:
            x[k] += step
        else:
            x[k] -= step
        simplex[k + 1] = x
        fvals[k + 1] = nll(Xs, Y, x)[0]
        evals += 1
    while evals < max_evals:
        order = np.argsort(fvals)
        simplex = simplex[order]
        fvals = fvals[order]
        spread = 0.0
        for i in range(1, p + 1):
            for k in range(p):
                spread = max(spread, abs(simplex[i, k] - simplex[0, k]))
        if spread < 1e-6 and abs(fvals[p] - fvals[0]) < 1e-10:
            break
        centroid = np.zeros(p)
        for i in range(p):
            centroid += simplex[i]
        centroid /= p
        xr = np.minimum(np.maximum(centroid + (centroid - simplex[p]), lo), hi)
        fr = nll(Xs, Y, xr)[0]
        evals += 1
        if fr < fvals[0]:
            xe = np.minimum(np.maximum(centroid + 2.0 * (centroid - simplex[p]), lo), hi)
            fe = nll(Xs, Y, xe)[0]
            evals += 1
            if fe < fr:
                simplex[p] = xe
                fvals[p] = fe
            else:
                simplex[p] = xr
                fvals[p] = fr
        elif fr < fvals[p - 1]:
            simplex[p] = xr
            fvals[p] = fr
        else:
            if fr < fvals[p]:
                xc = np.minimum(np.maximum(centroid + 0.5 * (xr - centroid), lo), hi)
            else:
                xc = np.minimum(np.maximum(centroid + 0.5 * (simplex[p] - centroid), lo), hi)
            fc = nll(Xs, Y, xc)[0]
            evals += 1
            if fc < min(fr, fvals[p]):
                simplex[p] = xc
                fvals[p] = fc
            else:
                for i in range(1, p + 1):
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
                    fvals[i] = nll(Xs, Y, simplex[i])[0]
                    evals += 1
    i_best = np.argmin(fvals)
    if fvals[i_best] < best_f:
        best_f = fvals[i_best]
        best_x = simplex[i_best].copy()
    return best_x, best_f, evals


# ---------------------------------------------------------------------------
# Bouc-Wen oscillator, fixed-step RK4 driven by tabulated loads
# ---------------------------------------------------------------------------

def _bw_rhs(u, v, z, f, m0, c, a0, alpha, uy, bw_beta, bw_gamma, bw_n):
    du = v
    dv = (f - c * v - a0 * (alpha * u + (1.0 - alpha) * uy * z)) / m0
    az = abs(z)
    if bw_n == 1.0:
        zn1 = 1.0
        zn = az
    else:
        zn = az ** bw_n
        zn1 = az ** (bw_n - 1.0)
    dz = (v - bw_beta * abs(v) * zn1 * z - bw_gamma * v * zn) / uy
    return du, dv, dz


def _bouc_wen_loops(loads, h, m0, c, a0, alpha, uy, bw_beta, bw_gamma, bw_n):
    """``loads[s, k]`` is the force at time ``k*h/2``; returns u at the end."""
    ns, nk = loads.shape
    n_steps = (nk - 1) // 2
    out = np.empty(ns)
    for s in range(ns):
        u = 0.0
        v = 0.0
        z = 0.0
        for k in range(n_steps):
            f0 = loads[s, 2 * k]
            fh = loads[s, 2 * k + 1]
            f1 = loads[s, 2 * k + 2]
            k1u, k1v, k1z = _bw_rhs(u, v, z, f0, m0, c, a0, alpha, uy,
                                    bw_beta, bw_gamma, bw_n)
            k2u, k2v, k2z = _bw_rhs(u + 0.5 * h * k1u, v + 0.5 * h * k1v,
                                    z + 0.5 * h * k1z, fh, m0, c, a0, alpha,
                                    uy, bw_beta, bw_gamma, bw_n)
            k3u, k3v, k3z = _bw_rhs(u + 0.5 * h * k2u, v + 0.5 * h * k2v,
                                    z + 0.5 * h * k2z, fh, m0, c, a0, alpha,
                                    uy, bw_beta, bw_gamma, bw_n)
            k4u, k4v, k4z = _bw_rhs(u + h * k3u, v + h * k3v, z + h * k3z,
                                    f1, m0, c, a0, alpha, uy, bw_beta,
                                    bw_gamma, bw_n)
            u += h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
            v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
            z += h / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
        out[s] = u
    return out


def _bw_rhs_numpy(u, v, z, f, m0, c, a0, alpha, uy, bw_beta, bw_gamma, bw_n):
    az = np.abs(z)
    dv = (f - c * v - a0 * (alpha * u + (1.0 - alpha) * uy * z)) / m0
    dz = (v - bw_beta * np.abs(v) * az ** (bw_n - 1.0) * z
          - bw_gamma * v * az ** bw_n) / uy
    return v, dv, dz


def bouc_wen_numpy(loads, h, m0, c, a0, alpha, uy, bw_beta, bw_gamma, bw_n):
    loads = np.asarray(loads, dtype=float)
    ns, nk = loads.shape
    n_steps = (nk - 1) // 2
    u = np.zeros(ns)
    v = np.zeros(ns)
    z = np.zeros(ns)
    args = (m0, c, a0, alpha, uy, bw_beta, bw_gamma, bw_n)
    with np.errstate(invalid="ignore", over="ignore"):
        for k in range(n_steps):
            f0, fh, f1 = loads[:, 2 * k], loads[:, 2 * k + 1], loads[:, 2 * k + 2]
            k1 = _bw_rhs_numpy(u, v, z, f0, *args)
            k2 = _bw_rhs_numpy(u + 0.5 * h * k1[0], v + 0.5 * h * k1[1],
                               z + 0.5 * h * k1[2], fh, *args)
            k3 = _bw_rhs_numpy(u + 0.5 * h * k2[0], v + 0.5 * h * k2[1],
                               z + 0.5 * h * k2[2], fh, *args)
            k4 = _bw_rhs_numpy(u + h * k3[0], v + h * k3[1], z + h * k3[2],
                               f1, *args)
            u = u + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
            v = v + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
            z = z + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
    return u


# ---------------------------------------------------------------------------
# flavour selection
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    sq_dists_numba = _jit(_sq_dists_loops)
    _cholesky_inplace = _jit(_cholesky_inplace)
    _forward_sub = _jit(_forward_sub)
    gp_nll_numba = _jit(_gp_nll_loops)
    _nelder_mead_numba = _jit(_nelder_mead_core, cache=False)
    _bw_rhs = _jit(_bw_rhs)
    bouc_wen_numba = _jit(_bouc_wen_loops)

    def gp_mle_numba(Xs, Y, starts, lo, hi, max_evals):
        return _nelder_mead_numba(gp_nll_numba, Xs, Y, starts, lo, hi,
                                  max_evals)
else:  # pragma: no cover
    sq_dists_numba = gp_nll_numba = gp_mle_numba = bouc_wen_numba = None


def gp_mle_numpy(Xs, Y, starts, lo, hi, max_evals):
    return _nelder_mead_core(gp_nll_numpy, Xs, Y, starts, lo, hi, max_evals)


if USE_NUMBA:
    sq_dists = sq_dists_numba
    gp_nll = gp_nll_numba
    gp_mle = gp_mle_numba
    bouc_wen = bouc_wen_numba
else:
    sq_dists = sq_dists_numpy
    gp_nll = gp_nll_numpy
    gp_mle = gp_mle_numpy
    bouc_wen = bouc_wen_numpy


def backend():
    return "numba" if USE_NUMBA else "numpy"
