#!/usr/bin/env python3
"""Benchmark the compiled sampling kernels against the NumPy fallback.

Measures the two bilinear gathers on viewport-projection-shaped workloads
and an end-to-end ERP step, and verifies bit parity along the way.

Usage: python benchmarks/bench_kernels.py [--repeats 5]
"""

from __future__ import annotations

import argparse
import math
import time

import numpy as np

from panoweave import kernels
from panoweave.latent import PanoLatent
from panoweave.projection import ViewportSpec, project_erp_to_viewport


def timeit(fn, repeats: int) -> float:
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_gather(repeats: int):
    rng = np.random.default_rng(0)
    cases = [
        ("project 4ch 512x1024 -> 64x64", (4, 512, 1024), 64 * 64),
        ("reproject footprint ~30k texels", (4, 64, 64), 30_000),
        ("project 16ch 256x512 -> 96x96", (16, 256, 512), 96 * 96),
    ]
    rows = []
    for name, stack_shape, n_samples in cases:
        stack = rng.standard_normal(stack_shape).astype(np.float32)
        xs = rng.uniform(-stack_shape[2], 2 * stack_shape[2], n_samples)
        ys = rng.uniform(-4.0, stack_shape[1] + 4.0, n_samples)

        t_np = timeit(lambda: kernels.bilinear_pano_sample_numpy(stack, xs, ys),
                      repeats)
        if kernels.have_fastpath():
            from panoweave import _fastpath
            out = np.empty((stack_shape[0], n_samples), dtype=np.float32)
            t_fast = timeit(lambda: _fastpath.bilinear_pano_sample(stack, xs, ys, out),
                            repeats)
            ref = kernels.bilinear_pano_sample_numpy(stack, xs, ys)
            assert ref.tobytes() == out.tobytes(), "bit parity broken"
        else:
            t_fast = math.nan
        rows.append((name, t_np, t_fast))
    return rows


def bench_projection(repeats: int):
    rng = np.random.default_rng(1)
    erp = PanoLatent(rng.standard_normal((4, 4, 512, 1024)).astype(np.float32),
                     h_ring=True)
    vp = ViewportSpec(0.3, 0.2, math.radians(100), (64, 64))

    import os
    results = {}
    for backend in ("numpy", "fast") if kernels.have_fastpath() else ("numpy",):
        os.environ["PANOWEAVE_KERNELS"] = backend
        results[backend] = timeit(lambda: project_erp_to_viewport(erp, vp), repeats)
    os.environ.pop("PANOWEAVE_KERNELS", None)
    return results


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    print(f"fastpath built: {kernels.have_fastpath()}")
    print(f"{'case':<40} {'numpy':>10} {'fast':>10} {'speedup':>8}")
    for name, t_np, t_fast in bench_gather(args.repeats):
        speed = t_np / t_fast if t_fast == t_fast else math.nan
        print(f"{name:<40} {t_np * 1e3:>8.2f}ms {t_fast * 1e3:>8.2f}ms {speed:>7.1f}x")
    proj = bench_projection(args.repeats)
    line = " ".join(f"{k}={v * 1e3:.2f}ms" for k, v in proj.items())
    print(f"{'viewport projection (full path)':<40} {line}")


if __name__ == "__main__":
    main()
