#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the pure-Python fallback.

Runs each kernel at full-frame video scale (where the inner loops
dominate), reports per-call times and speedups, and verifies both paths
agree bit-for-bit on every workload it times.

Usage:
    python benchmarks/bench_kernels.py [--frames N] [--size HxW] [--repeat R]
"""

import argparse
import time

import numpy as np


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--frames", type=int, default=8)
    ap.add_argument("--size", default="224x224")
    ap.add_argument("--tracks", type=int, default=6)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    h, w = (int(v) for v in args.size.split("x"))
    t, k = args.frames, args.tracks

    try:
        from macd.kernels import _ckern
    except ImportError:
        raise SystemExit("compiled kernels not built; run pip install -e . first")
    from macd.kernels import _pyk

    rng = np.random.default_rng(0)
    frames = rng.random((t, h, w, 1)).astype(np.float32)
    masks = rng.random((k, h, w))
    strengths = rng.random(k)
    confs = rng.uniform(0.4, 1.0, k)
    z = rng.random((t, h, w))

    workloads = [
        ("soft_box_mask", lambda m: m.soft_box_mask(h, w, 10.5, 12.0, w - 30.5,
                                                    h - 14.0, 2.0)),
        ("pool_sums 4x4", lambda m: m.pool_sums(frames, 4, 4)),
        ("union_max", lambda m: m.union_max(masks, strengths)),
        ("union_confnorm", lambda m: m.union_confnorm(masks, strengths, confs)),
        ("normalize_overlaps", lambda m: m.normalize_overlaps_px(masks, confs)),
        ("occlusion_blend", lambda m: m.occlusion_blend(frames, z, 0.5)),
        ("additive_clamp", lambda m: m.additive_clamp(frames, z)),
    ]

    print(f"video {t}x{h}x{w}x1, {k} tracks, best of {args.repeat}")
    print(f"{'kernel':<20} {'compiled':>12} {'pure':>12} {'speedup':>9}  equal")
    for name, call in workloads:
        out_c = call(_ckern)
        out_p = call(_pyk)
        if isinstance(out_c, tuple):
            equal = all(np.array_equal(a, b) for a, b in zip(out_c, out_p))
        else:
            equal = np.array_equal(out_c, out_p)
        tc = _time(lambda: call(_ckern), args.repeat)
        tp = _time(lambda: call(_pyk), args.repeat)
        print(f"{name:<20} {tc * 1e3:>10.2f}ms {tp * 1e3:>10.2f}ms "
              f"{tp / tc:>8.1f}x  {'yes' if equal else 'NO'}")
        if not equal:
            raise SystemExit(f"bit mismatch in {name}")


if __name__ == "__main__":
    main()
