#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

Times the triplet-emission kernels on synthetic inputs sized like real
assemblies, the injectivity clearance scan, and one end-to-end operator
assembly. The numba path is warmed up first so JIT compilation is excluded.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from thinlayer import GeometryFamily, assemble_full, build_patch, layer_geometry
from thinlayer import kernels
from thinlayer.magnetics import constant_field, gauge_fix, pullback


def timeit(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_diag(rng, n):
    gi = rng.integers(0, n // 4, n)
    gj = rng.integers(0, n // 4, n)
    coff = rng.uniform(0.1, 2.0, n)
    di = rng.uniform(0.1, 2.0, n)
    dj = rng.uniform(0.1, 2.0, n)
    theta = rng.uniform(-1.0, 1.0, n)
    return {
        "diag triplets (real)": lambda: kernels.diag_triplets(gi, gj, coff, di, dj),
        "diag triplets (phase)": lambda: kernels.diag_triplets(gi, gj, coff, di, dj, theta),
    }


def bench_mixed(rng, n):
    g = lambda: rng.integers(-1, n // 4, n)
    gp0, gm0, gp1, gm1 = g(), g(), g(), g()
    base = rng.uniform(-1, 1, n)
    isw = rng.uniform(0.5, 2.0, n // 4)
    th = [rng.uniform(-1, 1, n) for _ in range(4)]
    return {
        "mixed triplets (real)": lambda: kernels.mixed_triplets(
            gp0, gm0, gp1, gm1, base, isw
        ),
        "mixed triplets (phase)": lambda: kernels.mixed_triplets(
            gp0, gm0, gp1, gm1, base, isw, *th
        ),
    }


def bench_clearance(rng, n):
    schart = np.stack([np.linspace(0, 30, n), np.linspace(0, 20, n)], -1)
    plo = rng.normal(size=(n, 3))
    phi = plo + 0.05 * rng.normal(size=(n, 3))
    period = np.array([30.0, 0.0])
    return {
        f"clearance scan ({n} nodes)": lambda: kernels.min_clearance(
            schart, period, plo, phi, 0.5
        )
    }


def bench_assembly():
    patch = build_patch(GeometryFamily("torus", {"major": 2.0, "minor": 0.5}), (48, 48))
    layer = layer_geometry(patch, 0.05, 17)
    pot = gauge_fix(pullback(constant_field(3, [0.0, 0.0, 1.0]), layer))
    return {"torus 48x48x17 full assembly": lambda: assemble_full(layer, pot)}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=2_000_000, help="triplet batch size")
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    cases = {}
    cases.update(bench_diag(rng, args.size))
    cases.update(bench_mixed(rng, args.size // 2))
    cases.update(bench_clearance(rng, 2500))
    cases.update(bench_assembly())

    rows = []
    for name, fn in cases.items():
        times = {}
        for backend in ("numba", "numpy"):
            try:
                kernels.set_backend(backend)
            except RuntimeError:
                times[backend] = float("nan")
                continue
            fn()  # warm-up (JIT compile / cache touch)
            times[backend] = timeit(fn, args.repeat)
        speedup = times["numpy"] / times["numba"]
        rows.append((name, times["numba"], times["numpy"], speedup))

    w = max(len(r[0]) for r in rows) + 2
    print(f"{'kernel':<{w}}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for name, tn, tp, s in rows:
        print(f"{name:<{w}}{1e3 * tn:>12.2f}{1e3 * tp:>12.2f}{s:>10.2f}x")


if __name__ == "__main__":
    main()
