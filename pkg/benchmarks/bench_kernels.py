#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

The two hot geometric kernels are farthest point sampling (used by
poisoning, resampling, and the superimposition defense) and the
mean-kNN-distance pass inside statistical outlier removal (used by the
preprocessing pipeline on every training sample). Run:

    python3 benchmarks/bench_kernels.py [--sizes 256 1024 4096] [--repeats 5]
"""

import argparse
import time

import numpy as np

from featback._kernels import (
    fps_numba,
    fps_numpy,
    knn_mean_dist_numba,
    knn_mean_dist_numpy,
)


def time_call(fn, *args, repeats=5):
    fn(*args)  # warm-up (includes JIT compilation for the numba path)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+", default=[256, 1024, 4096])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--k", type=int, default=30, help="SOR neighbor count")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'n':>6}{'numpy (ms)':>12}{'numba (ms)':>12}{'speedup':>9}")
    for n in args.sizes:
        positions = rng.normal(size=(n, 3))
        w = max(n // 2, 1)
        t_np = time_call(fps_numpy, positions, w, 0, repeats=args.repeats)
        t_nb = time_call(fps_numba, positions, w, 0, repeats=args.repeats)
        assert np.array_equal(fps_numpy(positions, w, 0), fps_numba(positions, w, 0))
        print(f"{'fps (w=n/2)':<16}{n:>6}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}"
              f"{t_np / t_nb:>8.1f}x")
    for n in args.sizes:
        positions = rng.normal(size=(n, 3))
        k = min(args.k, n - 1)
        t_np = time_call(knn_mean_dist_numpy, positions, k, repeats=args.repeats)
        t_nb = time_call(knn_mean_dist_numba, positions, k, repeats=args.repeats)
        assert np.allclose(
            knn_mean_dist_numpy(positions, k), knn_mean_dist_numba(positions, k),
            rtol=0, atol=1e-12,
        )
        print(f"{f'sor knn (k={k})':<16}{n:>6}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}"
              f"{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
