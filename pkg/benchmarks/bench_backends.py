"""Time the numba and numpy backends on the hot passes and on a full fit.

    python3 benchmarks/bench_backends.py [--n 5000] [--p 100] [--repeat 5]

Compile time is excluded (one warm-up call per backend).  The last column
reports the largest absolute difference between the two backends.
"""
import argparse
import time

import numpy as np

from scqr import _accel
from scqr.data import make_uniform_grid
from scqr.simulation import SimDesign, gen_dataset
from scqr.solver import _Problem, fit_process, initial_beta, resolve_bandwidth


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--p", type=int, default=100)
    ap.add_argument("--grid-points", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    data, _ = gen_dataset(SimDesign("homo", args.n, args.p, "mixed_blocks" if args.p == 100
                                    else "gaussian_ar", 0, "mixture", 0))
    grid = make_uniform_grid(0.05, 0.05 * args.grid_points, 0.05)
    h = resolve_bandwidth("low_dim", data.n, data.p)
    prob = _Problem(data, "gaussian", h, grid.tau_L)
    beta = initial_beta(data)
    v = np.zeros(data.p)

    cases = {
        "loss_grad": lambda: prob.loss_grad(beta, v)[1],
        "hessian": lambda: prob.hessian(beta),
        "cdf_moment": lambda: prob.cdf_moment(beta),
        "fit_process": lambda: fit_process(data, grid, "gaussian", h=h).betas,
    }
    print(f"n={data.n} p={data.p} grid={len(grid)} repeat={args.repeat}")
    print(f"{'case':<12} {'numba [s]':>11} {'numpy [s]':>11} {'speed-up':>9} {'max |diff|':>11}")
    for name, fn in cases.items():
        res = {}
        for backend in ("numba", "numpy"):
            with _accel.use_backend(backend):
                fn()  # compile / warm caches
                res[backend] = best_of(fn, args.repeat)
        (tn, on), (tp, op) = res["numba"], res["numpy"]
        diff = float(np.max(np.abs(np.asarray(on) - np.asarray(op))))
        print(f"{name:<12} {tn:11.5f} {tp:11.5f} {tp / tn:9.2f} {diff:11.3g}")


if __name__ == "__main__":
    main()
