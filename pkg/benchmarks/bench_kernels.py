"""Time the numba kernels against their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is called once untimed (compilation), then timed as the best of
``--repeat`` calls. Both flavours are checked to agree before timing.
"""

import argparse
import time

import numpy as np

from raresim import _kernels as K
from raresim.limit_states import OscillatorConfig, _half_step_loads


def best_of(fn, repeat):
    fn()
    out = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t)
    return min(out)


def cases():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(5000, 10))
    x = rng.normal(size=10)
    yield "sq_dists 5000x10", K.sq_dists_numba, K.sq_dists_numpy, (X, x), None

    Xs = rng.normal(size=(30, 3))
    Y = np.sin(Xs[:, 0]) + Xs[:, 1] ** 2
    ll = np.zeros(3)
    yield "gp_nll n=30 p=3", K.gp_nll_numba, K.gp_nll_numpy, (Xs, Y, ll), 0

    span = np.ptp(Xs, axis=0)
    starts = np.log(np.outer([0.1, 0.3, 1.0, 3.0, 10.0], span))
    lo, hi = np.log(1e-2 * span), np.log(1e2 * span)
    yield "gp_mle n=30 p=3", K.gp_mle_numba, K.gp_mle_numpy, (Xs, Y, starts, lo, hi, 200), 1

    cfg = OscillatorConfig(substeps=16)
    loads = _half_step_loads(rng.normal(size=(8, 300)), cfg)
    args = (loads, cfg.h, cfg.m0, cfg.damping, cfg.a0, cfg.alpha, cfg.u_y,
            cfg.bw_beta, cfg.bw_gamma, cfg.bw_n)
    yield "bouc_wen 8 paths x 1760 steps", K.bouc_wen_numba, K.bouc_wen_numpy, args, None


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not K.HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return 1
    print(f"{'kernel':32s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speed-up':>9s}")
    for name, fast, slow, a, part in cases():
        ra, rb = fast(*a), slow(*a)
        if part is not None:
            # the optimiser's argmin may drift by round-off; its objective must not
            ra, rb = ra[part], rb[part]
        if not np.allclose(ra, rb, rtol=1e-6, atol=1e-8):
            raise SystemExit(f"{name}: flavours disagree")
        tf = best_of(lambda: fast(*a), args.repeat)
        ts = best_of(lambda: slow(*a), args.repeat)
        print(f"{name:32s} {1e3 * tf:11.3f} {1e3 * ts:11.3f} {ts / tf:8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
