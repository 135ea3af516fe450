#!/usr/bin/env python3
"""Compare the numba kernels against their numpy counterparts.

Usage: python benchmarks/bench_kernels.py [--n 12] [--rows 200000] [--repeat 5] [--e2e]

``--e2e`` additionally times a full ``gradplast run`` in a subprocess with
``GRADPLAST_NUMBA=1`` and ``GRADPLAST_NUMBA=0``.
"""
import argparse
import os
import subprocess
import sys
import tempfile
import time

import numpy as np


def best_of(fn, repeat):
    fn()  # warm-up (JIT compile on first call)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def bench_pcg(n, repeat):
    from gradplast import kernels
    from gradplast.elasticity import ElasticSolver, ElasticTensor
    from gradplast.grid import Grid

    grid = Grid.box(n)
    es = ElasticSolver(grid, ElasticTensor(grid, 1.0, 1.0))
    b = es.rhs(b=np.ones((grid.n_nodes, 3)))
    A = es.K

    def nb():
        x = np.zeros_like(b)
        kernels._pcg_nb(A.indptr, A.indices, A.data, es._dinv, b, x, 1e-10, 10000)

    def npy():
        x = np.zeros_like(b)
        kernels._pcg_np(A, es._dinv, b, x, 1e-10, 10000)

    return best_of(nb, repeat), best_of(npy, repeat), b.size


def bench_flow(rows, repeat):
    from gradplast import kernels

    rng = np.random.default_rng(0)
    S = rng.standard_normal((rows, 10))
    out = np.empty_like(S)
    pot = np.empty(rows)
    res = {}
    res["norton_hoff"] = (
        best_of(lambda: kernels._norton_hoff_nb(S, 0.1, 1.0, 1.0, 0.0, out, pot), repeat),
        best_of(lambda: kernels._norton_hoff_np(S, 0.1, 1.0, 1.0, 0.0), repeat))
    res["non_associative"] = (
        best_of(lambda: kernels._non_associative_nb(S, 0.0, 1.0, 1.0, 0.5, 0.0, out), repeat),
        best_of(lambda: kernels._non_associative_np(S, 0.0, 1.0, 1.0, 0.5, 0.0), repeat))
    return res


def bench_e2e(level):
    cfg = f"[load]\namplitude = 2.0\n[time]\nlevel = {level}\n"
    times = {}
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "bench.ini")
        with open(path, "w") as fh:
            fh.write(cfg)
        for flag in ("1", "0"):
            env = dict(os.environ, GRADPLAST_NUMBA=flag)
            cmd = [sys.executable, "-m", "gradplast.cli", "run", "--config", path,
                   "--out", os.path.join(tmp, "out" + flag)]
            subprocess.run(cmd, env=env, check=True, capture_output=True)  # warm cache
            t = time.perf_counter()
            subprocess.run(cmd, env=env, check=True, capture_output=True)
            times[flag] = time.perf_counter() - t
    return times["1"], times["0"]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=12, help="nodes per axis for the CG benchmark")
    ap.add_argument("--rows", type=int, default=200_000, help="stresses for the flow maps")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--e2e", action="store_true")
    ap.add_argument("--level", type=int, default=6)
    args = ap.parse_args()

    print(f"{'kernel':<22}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    t_nb, t_np, ndof = bench_pcg(args.n, args.repeat)
    print(f"{'pcg (' + str(ndof) + ' dofs)':<22}{1e3 * t_nb:>12.2f}{1e3 * t_np:>12.2f}"
          f"{t_np / t_nb:>10.2f}")
    for name, (a, b) in bench_flow(args.rows, args.repeat).items():
        print(f"{name:<22}{1e3 * a:>12.2f}{1e3 * b:>12.2f}{b / a:>10.2f}")
    if args.e2e:
        a, b = bench_e2e(args.level)
        print(f"{'run (level ' + str(args.level) + ')':<22}{1e3 * a:>12.0f}{1e3 * b:>12.0f}"
              f"{b / a:>10.2f}")


if __name__ == "__main__":
    main()
