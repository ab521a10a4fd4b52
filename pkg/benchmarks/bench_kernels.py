"""Benchmark the jitted scoring kernels against the numpy fallback.

Times per-pair scoring over a batch of synthetic patient matrices with
realistic shapes, once through the compiled loops and once through the
vectorized numpy lane, and prints a speedup table.

Run:
    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --patients 300 --notes 36 --dim 50
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from patsim import kernels


def make_batch(rng, patients: int, notes: int, dim: int):
    counts = rng.integers(max(1, notes - 6), notes + 7, patients)
    offsets = np.zeros(patients + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    rows = rng.standard_normal((offsets[-1], dim))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    rows = np.ascontiguousarray(rows)
    ii, jj = np.triu_indices(patients, k=1)
    return rows, offsets, ii.astype(np.int64), jj.astype(np.int64)


def time_call(fn, *args, repeats: int = 3) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def numpy_eds_batch(rows, offsets, ii, jj):
    out = np.empty(ii.size)
    for p in range(ii.size):
        a = rows[offsets[ii[p]]:offsets[ii[p] + 1]]
        b = rows[offsets[jj[p]]:offsets[jj[p] + 1]]
        out[p] = kernels._eds_score_numpy(a @ b.T)[0]
    return out


def numpy_mms_batch(rows, offsets, ii, jj):
    out = np.empty(ii.size)
    for p in range(ii.size):
        a = rows[offsets[ii[p]]:offsets[ii[p] + 1]]
        b = rows[offsets[jj[p]]:offsets[jj[p] + 1]]
        out[p] = kernels._mms_score_numpy(a, b)
    return out


def numpy_rv2_batch(grams, ii, jj):
    out = np.empty(ii.size)
    for p in range(ii.size):
        out[p] = np.dot(grams[ii[p]], grams[jj[p]])
    return out


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--patients", type=int, default=200)
    parser.add_argument("--notes", type=int, default=12,
                        help="mean notes per patient")
    parser.add_argument("--dim", type=int, default=50)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    rows, offsets, ii, jj = make_batch(rng, args.patients, args.notes, args.dim)
    grams = np.ascontiguousarray(np.vstack([
        kernels.rv2_gram(rows[offsets[k]:offsets[k + 1]])
        for k in range(args.patients)
    ]))
    npairs = ii.size
    print(f"{args.patients} patients, ~{args.notes} notes each, dim {args.dim}, "
          f"{npairs} pairs, backend: {kernels.BACKEND}")

    if not kernels.NUMBA_AVAILABLE:
        print("numba lane unavailable (PATSIM_NUMBA=0 or numba missing); "
              "timing the numpy lane only")

    lanes = {}
    if kernels.NUMBA_AVAILABLE:
        # warm the JIT before timing
        kernels.warmup()
        out = np.empty(npairs)
        lanes["eds/numba"] = time_call(
            kernels._eds_batch_loops, rows, offsets, ii, jj, out,
            repeats=args.repeats)
        lanes["mms/numba"] = time_call(
            kernels._mms_batch_loops, rows, offsets, ii, jj, out,
            repeats=args.repeats)
        lanes["rv2/numba"] = time_call(
            kernels._rv2_batch_loops, grams, ii, jj, out, repeats=args.repeats)
    lanes["eds/numpy"] = time_call(numpy_eds_batch, rows, offsets, ii, jj,
                                   repeats=args.repeats)
    lanes["mms/numpy"] = time_call(numpy_mms_batch, rows, offsets, ii, jj,
                                   repeats=args.repeats)
    lanes["rv2/numpy"] = time_call(numpy_rv2_batch, grams, ii, jj,
                                   repeats=args.repeats)

    print(f"\n{'kernel':<12} {'seconds':>9} {'us/pair':>9} {'speedup':>9}")
    for method in ("eds", "mms", "rv2"):
        numpy_key = f"{method}/numpy"
        for lane in ("numba", "numpy"):
            key = f"{method}/{lane}"
            if key not in lanes:
                continue
            secs = lanes[key]
            speedup = (lanes[numpy_key] / secs
                       if lane == "numba" and numpy_key in lanes else 1.0)
            print(f"{key:<12} {secs:9.3f} {1e6 * secs / npairs:9.1f} "
                  f"{speedup:8.1f}x")

    if kernels.NUMBA_AVAILABLE:
        a = rows[offsets[0]:offsets[1]]
        b = rows[offsets[1]:offsets[2]]
        delta = abs(kernels._eds_score_loops(np.ascontiguousarray(a @ b.T))[0]
                    - kernels._eds_score_numpy(a @ b.T)[0])
        print(f"\nlane agreement on a sample pair: |eds diff| = {delta:.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
