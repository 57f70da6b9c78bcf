"""Time the numba kernels against their pure-numpy twins.

Shapes follow one training step of the default model at 64x64 with batch 16.
Run with ``python benchmarks/bench_kernels.py [--repeat N]``.
"""
import argparse
import timeit

import numpy as np

from litenext.kernels import _numba, _numpy


def cases(rng):
    b, c, s = 16, 16, 64
    x = rng.standard_normal((b, c, s + 2, s + 2)).astype(np.float32)
    cols = _numpy.im2col(x, 3, 1, s, s)
    xdw = rng.standard_normal((b, c, s + 6, s + 6)).astype(np.float32)
    wdw = rng.standard_normal((c, 1, 7, 7)).astype(np.float32)
    g = rng.standard_normal((b, c, s, s)).astype(np.float32)
    xp = rng.standard_normal((b, 32, s, s)).astype(np.float32)
    _, idx = _numpy.maxpool2_forward(xp)
    gp = rng.standard_normal((b, 32, s // 2, s // 2)).astype(np.float32)
    mask = (rng.random((256, 256)) < 0.3).astype(np.float64)
    return {
        "im2col 3x3": lambda m: m.im2col(x, 3, 1, s, s),
        "col2im 3x3": lambda m: m.col2im(cols, b, c, s + 2, s + 2, 3, 1, s, s),
        "dwconv fwd 7x7": lambda m: m.dwconv_forward(xdw, wdw, s, s),
        "dwconv bwd 7x7": lambda m: m.dwconv_backward(xdw, wdw, g),
        "maxpool fwd": lambda m: m.maxpool2_forward(xp),
        "maxpool bwd": lambda m: m.maxpool2_backward(gp, idx),
        "box filter k=9": lambda m: m.box_filter(mask, 9, 1.0),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, fn in cases(rng).items():
        fn(_numba)  # compile outside the timed region
        t_np = min(timeit.repeat(lambda: fn(_numpy), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: fn(_numba), number=1, repeat=args.repeat))
        print(f"{name:<16}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
