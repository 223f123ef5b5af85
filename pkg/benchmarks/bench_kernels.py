#!/usr/bin/env python3
"""Numba vs numpy kernel benchmark.

Times both twins of each RLE kernel on the same inputs and checks they agree.
Prints a table, or JSON with --json.

    python benchmarks/bench_kernels.py --size 256 --masks 64
"""
import argparse
import json
import time

import numpy as np

from mapalign import kernels
from mapalign._accel import NUMBA_AVAILABLE

WARMUP_RUNS = 2
BENCH_RUNS = 5
SEED = 42


def random_masks(rng, n, size):
    """Blobby masks: a few rectangles each, similar in texture to building footprints."""
    out = []
    for _ in range(n):
        g = np.zeros((size, size), dtype=bool)
        for _ in range(rng.integers(1, 6)):
            r, c = rng.integers(0, size, 2)
            g[r:r + rng.integers(4, size // 4), c:c + rng.integers(4, size // 4)] = True
        out.append(np.ascontiguousarray(g.T).reshape(-1).view(np.uint8))
    return out


def bench(func, *args, warmup=WARMUP_RUNS, runs=BENCH_RUNS):
    for _ in range(warmup):
        result = func(*args)
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        result = func(*args)
        times.append(time.perf_counter() - t0)
    return min(times), result


def run(size, n_masks):
    rng = np.random.default_rng(SEED)
    flats = random_masks(rng, n_masks, size)
    n = size * size
    counts = [kernels.encode_runs_numpy(f) for f in flats]
    flat_c, offsets = kernels.pack_counts(counts)

    cases = {
        "encode": (
            lambda enc: [enc(f) for f in flats],
            kernels.encode_runs_numba, kernels.encode_runs_numpy,
        ),
        "decode": (
            lambda dec: [dec(c, n) for c in counts],
            kernels.decode_runs_numba, kernels.decode_runs_numpy,
        ),
        "intersect": (
            lambda isect: [isect(a, b) for a, b in zip(counts, counts[1:])],
            kernels.intersect_runs_numba, kernels.intersect_runs_numpy,
        ),
        "pairwise": (
            lambda pw: pw(flat_c, offsets, flat_c, offsets),
            kernels.pairwise_intersections_numba, kernels.pairwise_intersections_numpy,
        ),
    }

    rows = []
    for name, (driver, fast, slow) in cases.items():
        t_numba, r_numba = bench(driver, fast)
        t_numpy, r_numpy = bench(driver, slow)
        same = all(np.array_equal(a, b) for a, b in zip(r_numba, r_numpy)) if isinstance(r_numba, list) \
            else np.array_equal(r_numba, r_numpy)
        rows.append({
            "kernel": name,
            "numba_ms": t_numba * 1e3,
            "numpy_ms": t_numpy * 1e3,
            "speedup": t_numpy / t_numba if t_numba else float("inf"),
            "agree": bool(same),
        })
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=256, help="mask side length")
    parser.add_argument("--masks", type=int, default=64, help="number of masks")
    parser.add_argument("--json", action="store_true")
    args = parser.parse_args()

    if not NUMBA_AVAILABLE:
        print("numba not installed; both columns time the numpy path")
    rows = run(args.size, args.masks)
    if args.json:
        print(json.dumps({"size": args.size, "masks": args.masks, "results": rows}, indent=2))
        return
    print(f"{args.masks} masks of {args.size}x{args.size}, best of {BENCH_RUNS}")
    print(f"{'kernel':<10} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}  agree")
    for r in rows:
        print(f"{r['kernel']:<10} {r['numba_ms']:>10.3f} {r['numpy_ms']:>10.3f} {r['speedup']:>7.1f}x  {r['agree']}")


if __name__ == "__main__":
    main()
