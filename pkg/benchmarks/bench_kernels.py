"""Compare the compiled and numpy convolution kernels.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Times im2col/col2im on the layer shapes the default model uses, checks the
two backends agree bit-for-bit, and prints one row per shape.
"""

import argparse
import time

import numpy as np

from gmmfill import _fallback

try:
    from gmmfill import _ckernels
except ImportError:
    _ckernels = None

# (N, C, H, W, k, stride, pad) for a batch of 16 at 32x32
SHAPES = [
    (16, 2, 32, 32, 3, 2, 1),
    (16, 16, 16, 16, 3, 2, 1),
    (48, 32, 16, 16, 3, 1, 1),
    (48, 8, 32, 32, 3, 1, 1),
    (32, 1, 32, 32, 3, 2, 1),
]


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench(shape, repeat):
    n, c, h, w, k, s, p = shape
    oh, ow = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
    x = np.random.default_rng(0).standard_normal((n, c, h, w))
    cols = _fallback.im2col(x, k, k, s, p, oh, ow)
    row = {"shape": f"{n}x{c}x{h}x{w} k{k} s{s}"}
    row["np_im2col"] = best_time(lambda: _fallback.im2col(x, k, k, s, p, oh, ow), repeat)
    row["np_col2im"] = best_time(lambda: _fallback.col2im(cols, n, c, h, w, k, k, s, p, oh, ow), repeat)
    if _ckernels is not None:
        same = np.array_equal(_ckernels.im2col(x, k, k, s, p, oh, ow), cols) and np.array_equal(
            _ckernels.col2im(cols, n, c, h, w, k, k, s, p, oh, ow),
            _fallback.col2im(cols, n, c, h, w, k, k, s, p, oh, ow),
        )
        row["cy_im2col"] = best_time(lambda: _ckernels.im2col(x, k, k, s, p, oh, ow), repeat)
        row["cy_col2im"] = best_time(lambda: _ckernels.col2im(cols, n, c, h, w, k, k, s, p, oh, ow), repeat)
        row["identical"] = same
    return row


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled kernels not built; timing the numpy backend only")
    print(f"{'shape':<24}{'np im2col':>11}{'cy im2col':>11}{'np col2im':>11}{'cy col2im':>11}  identical")
    for shape in SHAPES:
        r = bench(shape, args.repeat)
        ms = lambda key: f"{1e3 * r[key]:9.3f}ms" if key in r else f"{'-':>11}"
        print(f"{r['shape']:<24}{ms('np_im2col')}{ms('cy_im2col')}{ms('np_col2im')}{ms('cy_col2im')}  {r.get('identical', '-')}")


if __name__ == "__main__":
    main()
