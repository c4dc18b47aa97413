"""Time the compiled conv kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both backends are imported directly, so the result does not depend on
PEDKD_PURE_PYTHON.
"""

import argparse
import timeit

import numpy as np

from pedkd import _kernels_py

try:
    from pedkd import _kernels as _kernels_c
except ImportError:
    _kernels_c = None

SHAPES = [(32, 3, 64, 64), (32, 16, 32, 32), (32, 32, 16, 16)]


def bench(mod, x, repeat):
    B, C, H, W = x.shape
    cols = mod.im2col(x, 3, 1)
    t_i2c = min(timeit.repeat(lambda: mod.im2col(x, 3, 1), number=1, repeat=repeat))
    t_c2i = min(timeit.repeat(lambda: mod.col2im(cols, C, H, W, 3, 1), number=1, repeat=repeat))
    t_pool = min(timeit.repeat(lambda: mod.avg_pool2(x), number=1, repeat=repeat))
    return t_i2c, t_c2i, t_pool


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels_c is None:
        print("compiled extension not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'shape':>18s} {'kernel':>8s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for shape in SHAPES:
        x = rng.normal(size=shape)
        py = bench(_kernels_py, x, args.repeat)
        cy = bench(_kernels_c, x, args.repeat) if _kernels_c is not None else (float("nan"),) * 3
        for name, a, b in zip(("im2col", "col2im", "pool2"), py, cy):
            print(f"{'x'.join(map(str, shape)):>18s} {name:>8s} {a * 1e3:10.2f} {b * 1e3:10.2f} {a / b:8.2f}")


if __name__ == "__main__":
    main()
