"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--batch N]

Shapes follow the toy encoder at batch 128 (32x32 inputs, widths 16/32/64).
Each kernel is checked for agreement before it is timed.
"""
import argparse
import sys
import timeit

import numpy as np

from dualgate.tensorcore import _fallback

try:
    from dualgate.tensorcore import _kernels
except ImportError:
    _kernels = None


def cases(batch: int, rng: np.random.Generator):
    for h, c, k, s, p in [(32, 16, 3, 1, 1), (16, 32, 3, 1, 1), (16, 32, 3, 2, 1), (8, 64, 3, 1, 1)]:
        x = rng.standard_normal((batch, h, h, c)).astype(np.float32)
        ho = (h + 2 * p - k) // s + 1
        cols = rng.standard_normal((batch * ho * ho, k * k * c)).astype(np.float32)
        tag = f"{h}x{h}x{c} k{k} s{s}"
        yield f"im2col  {tag}", (lambda m, x=x, k=k, s=s, p=p: m.im2col(x, k, s, p))
        yield f"col2im  {tag}", (lambda m, cols=cols, h=h, c=c, k=k, s=s, p=p:
                                 m.col2im(cols, batch, h, h, c, k, s, p))
    for c, l in [(16, 1024), (64, 64)]:
        a = rng.standard_normal((batch, c, l)).astype(np.float32)
        b = rng.standard_normal((batch, c, l)).astype(np.float32)
        yield f"channel_sums {c}x{l}", (lambda m, a=a: m.channel_sums(a))
        yield f"channel_dot  {c}x{l}", (lambda m, a=a, b=b: m.channel_dot(a, b))


def agree(x, y) -> bool:
    if isinstance(x, tuple):
        return all(agree(u, v) for u, v in zip(x, y))
    return np.allclose(x, y, rtol=1e-4, atol=1e-4)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=128)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled kernels are not built; run `pip install -e .` first", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'cython ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fn in cases(args.batch, rng):
        if not agree(fn(_kernels), fn(_fallback)):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 1
        fast = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e3
        slow = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:34s} {fast:10.2f} {slow:10.2f} {slow / fast:7.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
