"""Compare the numba and numpy kernel backends on attack-sized workloads.

Run directly:  python3 benchmarks/benchmark_kernels.py [--repeats N]

Spawns one subprocess per backend (backend selection happens at import time)
and prints a wall-clock table plus a cross-backend agreement check.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

CASES = [
    ("resize up 32->64", "resize", (3, 32, 32), (64, 64)),
    ("resize down 64->48", "resize", (3, 64, 64), (48, 48)),
    ("resize vjp 64->32", "resize_vjp", (3, 64, 64), (32, 32)),
    ("im2col 32x48x48", "im2col", (16, 32, 48, 48), None),
    ("col2im 32x48x48", "col2im", (16, 32, 48, 48), None),
]


def run_case(kernels, kind, in_shape, out_shape, repeats):
    rng = np.random.default_rng(0)
    x = rng.random(in_shape)
    if kind == "resize":
        fn = lambda: kernels.bilinear_resize(x, *out_shape)
    elif kind == "resize_vjp":
        fn = lambda: kernels.bilinear_resize_vjp(x, *out_shape)
    elif kind == "im2col":
        fn = lambda: kernels.im2col3(x)
    else:
        cols = kernels.im2col3(x)
        fn = lambda: kernels.col2im3(cols, in_shape[1], in_shape[2], in_shape[3])
    out = fn()  # warmup (numba JIT)
    t0 = time.perf_counter()
    for _ in range(repeats):
        out = fn()
    dt = (time.perf_counter() - t0) / repeats
    return dt, float(np.asarray(out).sum())


def run_backend(backend: str, repeats: int) -> dict:
    env = {**os.environ, "MAA_BACKEND": backend}
    code = (
        "import json, sys; sys.argv=['x']; "
        "from benchmarks.benchmark_kernels import CASES, run_case; "
        "from maa import kernels; "
        f"out = {{name: run_case(kernels, kind, a, b, {repeats}) "
        "for name, kind, a, b in CASES}; "
        "print(json.dumps({'backend': kernels.backend_name(), 'cases': out}))"
    )
    proc = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                          text=True, cwd=os.path.dirname(os.path.dirname(
                              os.path.abspath(__file__))))
    if proc.returncode != 0:
        raise RuntimeError(f"backend {backend} failed:\n{proc.stderr}")
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=10)
    args = ap.parse_args()

    results = {}
    for backend in ("numpy", "numba"):
        try:
            results[backend] = run_backend(backend, args.repeats)
        except RuntimeError as e:
            print(f"skipping {backend}: {e}")
    if len(results) < 2:
        print("need both backends for a comparison")
        return 1

    print(f"{'case':24s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for name, _, _, _ in CASES:
        t_np, sum_np = results["numpy"]["cases"][name]
        t_nb, sum_nb = results["numba"]["cases"][name]
        if abs(sum_np - sum_nb) > 1e-6 * max(1.0, abs(sum_np)):
            print(f"{name}: backend outputs disagree ({sum_np} vs {sum_nb})")
            return 1
        print(f"{name:24s} {t_np*1e3:9.2f}ms {t_nb*1e3:9.2f}ms {t_np/t_nb:7.2f}x")
    print("outputs agree across backends")
    return 0


if __name__ == "__main__":
    sys.exit(main())
