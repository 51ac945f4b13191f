"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from impact_hedge import kernels


def _best(fn, repeat):
    fn()  # warm-up (includes JIT compilation on the numba side)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_hull(rng, repeat):
    x = np.sort(rng.uniform(-5, 5, 200_000))
    y = -x ** 2 + rng.normal(0, 1, x.size)
    return {b: _best(lambda b=b: kernels.upper_hull(x, y, backend=b), repeat) for b in ("numba", "numpy")}


def bench_rows(rng, repeat, n_x=400, n_rows=200):
    x = np.linspace(-5, 5, n_x + 1)
    phi = np.maximum(x, 0.0) - np.maximum(x - 1, 0.0)
    one = np.ones_like(x)
    s2, fv, gb, whi = 0.04 * one, 0.5 * one, 1.75 * one, 10.0 * one

    def run(b):
        row = phi
        for _ in range(n_rows):
            row = kernels.solve_row(row, 1e-4, 0.025, s2, fv, gb, 0.0, whi, backend=b)[0]
    return {b: _best(lambda b=b: run(b), repeat) for b in ("numba", "numpy")}


def bench_hedge(rng, repeat, n_paths=2000, n_steps=500):
    n_x, n_t = 200, 100
    x = np.linspace(-5, 5, n_x + 1)
    v = np.tile(0.1 * x ** 2, (n_t + 1, 1))
    vx = np.tile(0.2 * x, (n_t + 1, 1))
    vxx = np.full_like(v, 0.2)
    zero = np.zeros_like(v)
    one = np.ones_like(x)
    coef = (0 * one, 0.2 * one, 0.5 * one, 0 * one, 1.75 * one)
    dw = rng.normal(0, np.sqrt(1.0 / n_steps), (n_paths, n_steps))

    def run(b):
        kernels.hedge_paths((v, vx, vxx, zero, zero), -5.0, 0.05, 0.01, 0.0, 1.0 / n_steps, coef,
                            17.5, 0.0, 1e-3, 0.0, 0.0, 0.0, dw, backend=b)
    return {b: _best(lambda b=b: run(b), repeat) for b in ("numba", "numpy")}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<12}{'numba [s]':>12}{'numpy [s]':>12}{'speed-up':>10}")
    for name, fn in (("upper_hull", bench_hull), ("solve_row", bench_rows), ("hedge", bench_hedge)):
        t = fn(rng, args.repeat)
        print(f"{name:<12}{t['numba']:>12.4f}{t['numpy']:>12.4f}{t['numpy'] / t['numba']:>10.1f}")


if __name__ == "__main__":
    main()
