#!/usr/bin/env python3
"""Benchmark the numba convolution kernels against the pure-numpy fallback.

Both backends share the im2col + GEMM decomposition; numba JIT-compiles the
gather loops while numpy uses stride tricks.  Shapes cover the training
regime (short sequences, narrow channels) and wider feature maps.

Usage:
    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --repeat-seconds 1.0 --output results.json
    MELFORGE_KERNELS=numpy python benchmarks/bench_kernels.py   # numpy only
"""

import argparse
import json
import time

import numpy as np

from melforge import kernels

SHAPES = [
    # (batch, c_in, c_out, t_out, kernel, dilation)  -- label
    ((16, 64, 64, 15, 3, 3), "t2m trunk, short utterances"),
    ((16, 32, 64, 15, 3, 9), "t2m deep dilation"),
    ((16, 64, 64, 60, 3, 3), "t2m trunk, long utterances"),
    ((16, 32, 32, 60, 3, 1), "ssrn blocks after upsampling"),
    ((16, 80, 64, 120, 3, 1), "mel-width critic stage"),
    ((1, 64, 64, 30, 3, 27), "single-utterance synthesis"),
    ((16, 128, 128, 120, 3, 3), "full-scale trunk"),
]


def _time(fn, seconds: float) -> float:
    fn()  # warm
    n = 0
    t0 = time.perf_counter()
    while time.perf_counter() - t0 < seconds:
        fn()
        n += 1
    return (time.perf_counter() - t0) / n * 1e6  # us/call


def bench(seconds: float) -> list[dict]:
    rng = np.random.default_rng(0)
    kernels.warmup()
    rows = []
    for (b, ci, co, t, k, d), label in SHAPES:
        tp = t + (k - 1) * d
        x = rng.standard_normal((b, ci, tp)).astype(np.float32)
        w = rng.standard_normal((co, ci, k)).astype(np.float32)
        gy = rng.standard_normal((b, co, t)).astype(np.float32)
        row = {"shape": f"B{b} {ci}->{co} T{t} K{k} d{d}", "label": label}
        outputs = {}
        for backend in ("numba", "numpy"):
            try:
                kernels.set_backend(backend)
            except ImportError:
                continue
            outputs[backend] = kernels.conv_valid(x, w, d)
            row[f"{backend}_conv_us"] = _time(lambda: kernels.conv_valid(x, w, d), seconds)
            row[f"{backend}_wgrad_us"] = _time(
                lambda: kernels.conv_weight_grad(x, gy, d, k), seconds
            )
        if "numba" in outputs and "numpy" in outputs:
            diff = np.abs(outputs["numba"] - outputs["numpy"]).max()
            assert diff <= 1e-3, f"backend mismatch {diff} for {row['shape']}"
            row["conv_speedup"] = row["numpy_conv_us"] / row["numba_conv_us"]
            row["wgrad_speedup"] = row["numpy_wgrad_us"] / row["numba_wgrad_us"]
        rows.append(row)
    return rows


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat-seconds", type=float, default=0.4,
                        help="sampling window per measurement")
    parser.add_argument("--output", help="write results as JSON")
    args = parser.parse_args()

    rows = bench(args.repeat_seconds)
    header = f"{'shape':>26} {'numba conv':>11} {'numpy conv':>11} {'speedup':>8}  {'numba gw':>9} {'numpy gw':>9} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for r in rows:
        if "conv_speedup" in r:
            print(
                f"{r['shape']:>26} {r['numba_conv_us']:>9.0f}us {r['numpy_conv_us']:>9.0f}us"
                f" {r['conv_speedup']:>7.2f}x  {r['numba_wgrad_us']:>7.0f}us"
                f" {r['numpy_wgrad_us']:>7.0f}us {r['wgrad_speedup']:>7.2f}x"
                f"   {r['label']}"
            )
        else:
            only = "numpy" if "numpy_conv_us" in r else "numba"
            print(f"{r['shape']:>26} {only} only: conv {r[f'{only}_conv_us']:.0f}us")
    if args.output:
        with open(args.output, "w") as f:
            json.dump(rows, f, indent=2)
        print(f"\nresults written to {args.output}")


if __name__ == "__main__":
    main()
