#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Runs the banded covariance accumulation and the pair scan at a few grid
sizes with both backends and prints a timing table.  The numpy fallback
is the one selected by ``QFIELD_NO_NUMBA=1``; this script imports both
implementations directly so a single process can compare them.

Usage:  python benchmarks/bench_kernels.py [--sizes 1025,4097] [--repeat 3]
"""

import argparse
import time

import numpy as np

import qfield._kernels as K
from qfield.covar import FieldModel, _panel_tables, make_dyadic_grid
from qfield.gauge import GaugeSpec
from qfield.modulus import build_denominator_table


def timeit(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_band_fill(N, repeat):
    g = GaugeSpec("powerlaw", nu=0.25)
    m = FieldModel(g, 1, (np.array([0.0]), np.array([1.0])),
                   grid_limit=max(N, 16384))
    n = int(np.log2(N - 1))
    _, axes = make_dyadic_grid(m, n)
    w = max(N // 16, 8)
    K1, Wg, P0, S01 = _panel_tables(m, axes[0], w + 1)
    rows = []
    for label, fn in (("numba", K._band_fill_numba if K.HAVE_NUMBA else None),
                      ("numpy", K._band_fill_numpy)):
        if fn is None:
            continue
        fn(np.zeros((w + 1, N)), P0, S01, K1, Wg)  # warm up / compile
        t, _ = timeit(lambda: fn(np.zeros((w + 1, N)), P0, S01, K1, Wg),
                      repeat)
        rows.append((label, t))
    return rows


def bench_scan(N, repeat):
    g = GaugeSpec("powerlaw", nu=0.5)
    t_axis = np.linspace(0.0, 1.0, N)
    w = max(N // 16, 8)
    band = np.zeros((w + 1, N))
    band[0] = t_axis
    for k in range(1, w + 1):
        band[k, :N - k] = t_axis[:N - k]
    rng = np.random.default_rng(0)
    values = rng.standard_normal(N)
    ladder = 0.25 * 0.5 ** np.arange(8)
    logd0, inv_step, table = build_denominator_table(g, 1.0, 0.25)
    args = (values, band, ladder, 1.0 - 1e-12, 1e-13, logd0, inv_step,
            table)
    rows = []
    for label, fn in (("numba", K._scan_band_numba if K.HAVE_NUMBA else None),
                      ("numpy", K._scan_band_numpy)):
        if fn is None:
            continue
        fn(*args)  # warm up / compile
        t, _ = timeit(lambda: fn(*args), repeat)
        rows.append((label, t))
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="1025,4097,16385")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    print(f"numba available: {K.HAVE_NUMBA}   active backend: "
          f"{'numba' if K.USE_NUMBA else 'numpy'}")
    for name, bench in (("band_fill", bench_band_fill),
                        ("scan_band", bench_scan)):
        print(f"\n{name}")
        print(f"  {'N':>7}  {'backend':>7}  {'seconds':>10}  {'speedup':>8}")
        for N in sizes:
            rows = bench(N, args.repeat)
            base = dict(rows).get("numpy")
            for label, t in rows:
                speed = f"{base / t:7.1f}x" if base and label == "numba" \
                    else "       -"
                print(f"  {N:>7}  {label:>7}  {t:>10.4f}  {speed}")


if __name__ == "__main__":
    main()
