"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Shapes are one fMRI time-folded batch at desk and full resolution.
"""
from __future__ import annotations

import argparse
import json
import platform
import timeit

import numpy as np

from volnet import kernels

SHAPES = {
    "desk block1 (90x16^3x1)": (90, 16, 16, 16, 1),
    "desk block2 (90x8^3x8)": (90, 8, 8, 8, 8),
    "full block1 (30x28^3x1)": (30, 28, 28, 28, 1),
    "full block2 (30x14^3x64)": (30, 14, 14, 14, 64),
}


def cases(mod, shape, rng):
    x = rng.standard_normal(shape).astype(np.float32)
    c = shape[-1]
    cols = rng.standard_normal(shape[:-1] + (8 * c,)).astype(np.float32)
    out, arg = mod.maxpool3d_forward(x)
    g = rng.standard_normal(out.shape).astype(np.float32)
    return {
        "im2col": lambda: mod.im2col3d(x),
        "col2im": lambda: mod.col2im3d(cols, c),
        "pool_fwd": lambda: mod.maxpool3d_forward(x),
        "pool_bwd": lambda: mod.maxpool3d_backward(g, arg, x.shape),
    }


def run(repeat: int) -> list[dict]:
    rng = np.random.default_rng(0)
    backends = kernels.backends()
    rows = []
    for label, shape in SHAPES.items():
        timings = {name: {k: min(timeit.repeat(fn, number=1, repeat=repeat))
                          for k, fn in cases(mod, shape, rng).items()}
                   for name, mod in backends.items()}
        for op in timings["python"]:
            row = {"shape": label, "op": op, **{f"{n}_ms": 1e3 * t[op] for n, t in timings.items()}}
            if "cython" in timings:
                row["speedup"] = timings["python"][op] / timings["cython"][op]
            rows.append(row)
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the rows as JSON")
    args = ap.parse_args(argv)
    rows = run(args.repeat)
    have_c = "cython" in kernels.backends()
    print(f"active backend: {kernels.BACKEND}; numpy {np.__version__}; {platform.processor() or platform.machine()}")
    head = f"{'shape':<26} {'op':<9} {'python ms':>10}" + (f" {'cython ms':>10} {'speedup':>8}" if have_c else "")
    print(head)
    for r in rows:
        line = f"{r['shape']:<26} {r['op']:<9} {r['python_ms']:>10.2f}"
        if have_c:
            line += f" {r['cython_ms']:>10.2f} {r['speedup']:>7.1f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
