"""Time the numba and numpy glasso sweep kernels on the same inputs.

    python benchmarks/bench_glasso.py [--sizes 30 60 100] [--repeat 3]

Both backends run full glasso solves (same S, same lambda) and the script
checks that they land on the same precision matrix.
"""
import argparse
import time

import numpy as np

from twolayer import _kernels
from twolayer.glasso import GlassoSettings, glasso_solve


def problem(p, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2 * p, p))
    return np.cov(x, rowvar=False, bias=True)


def solve_with(kernel, S, lam):
    saved = _kernels.sweep
    _kernels.sweep = kernel
    try:
        return glasso_solve(S, GlassoSettings(lam))
    finally:
        _kernels.sweep = saved


def best_time(kernel, S, lam, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        res = solve_with(kernel, S, lam)
        times.append(time.perf_counter() - t0)
    return min(times), res


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[30, 60, 100])
    ap.add_argument("--lam", type=float, default=0.1)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _kernels.sweep_numba is None:
        raise SystemExit("numba is not installed; nothing to compare")
    solve_with(_kernels.sweep_numba, problem(5), args.lam)  # compile outside the timing
    print(f"{'p':>5} {'numba_s':>10} {'numpy_s':>10} {'speedup':>8} {'max_diff':>10}")
    for p in args.sizes:
        S = problem(p)
        t_nb, r_nb = best_time(_kernels.sweep_numba, S, args.lam, args.repeat)
        t_np, r_np = best_time(_kernels.sweep_numpy, S, args.lam, args.repeat)
        diff = float(np.max(np.abs(r_nb.omega - r_np.omega)))
        print(f"{p:>5} {t_nb:>10.4f} {t_np:>10.4f} {t_np / t_nb:>8.1f} {diff:>10.2e}")


if __name__ == "__main__":
    main()
