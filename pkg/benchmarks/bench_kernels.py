"""Time the compiled and numpy im2col/col2im kernels on UNet-sized shapes.

    python3 benchmarks/bench_kernels.py [--repeats N]
"""
import argparse
import timeit

import numpy as np

from dodgen.core import _kernels_ref

try:
    from dodgen.core import _kernels
except ImportError:
    _kernels = None

# (batch, channels, height, width, kernel, stride): the shapes a 32x32 run sees
SHAPES = [
    (16, 3, 32, 32, 3, 1),
    (16, 16, 32, 32, 3, 2),
    (64, 32, 8, 8, 3, 1),
    (64, 64, 4, 4, 3, 1),
]


def _geom(h, w, k, s):
    p = k // 2
    return k, k, s, s, p, p, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1


def bench(repeats: int) -> list[tuple]:
    rows = []
    r = np.random.default_rng(0)
    for n, c, h, w, k, s in SHAPES:
        g = _geom(h, w, k, s)
        x = r.standard_normal((n, c, h, w))
        cols = _kernels_ref.im2col(x, *g)
        for op, args in (("im2col", (x, *g)), ("col2im", (cols, n, c, h, w, *g))):
            ref = getattr(_kernels_ref, op)
            t_py = min(timeit.repeat(lambda: ref(*args), number=1, repeat=repeats))
            t_cy = same = None
            if _kernels is not None:
                ext = getattr(_kernels, op)
                t_cy = min(timeit.repeat(lambda: ext(*args), number=1, repeat=repeats))
                same = np.array_equal(ext(*args), ref(*args))
            rows.append((op, f"{n}x{c}x{h}x{w} k{k} s{s}", t_py, t_cy, same))
    return rows


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; timing the numpy kernels only")
    print(f"{'op':7s} {'shape':22s} {'numpy ms':>9s} {'cython ms':>10s} {'ratio':>6s} bitwise")
    for op, shape, t_py, t_cy, same in bench(args.repeats):
        cy = f"{t_cy * 1e3:10.2f}" if t_cy is not None else f"{'-':>10s}"
        ratio = f"{t_py / t_cy:6.2f}" if t_cy else f"{'-':>6s}"
        print(f"{op:7s} {shape:22s} {t_py * 1e3:9.2f} {cy} {ratio} {same if same is not None else '-'}")


if __name__ == "__main__":
    main()
