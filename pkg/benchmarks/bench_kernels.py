"""Time the compiled im2col/col2im kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``. Shapes follow the first
encoder layers of the generator at desk and full scale.
"""

import argparse
import timeit

import numpy as np

from facedepth.autodiff.kernels import backend_module

# (batch, channels, padded height, padded width, kernel, stride)
SHAPES = [
    (16, 1, 36, 36, 5, 2),
    (16, 16, 20, 20, 5, 2),
    (8, 1, 100, 100, 5, 2),
    (8, 128, 52, 52, 5, 2),
]


def out_extent(n: int, k: int, s: int) -> int:
    return (n - k) // s + 1


def bench(repeat: int) -> None:
    try:
        fast = backend_module("cython")
    except ImportError:
        print("compiled kernels not built; nothing to compare")
        return
    slow = backend_module("python")
    rng = np.random.default_rng(0)
    print(f"{'shape':<32}{'op':<8}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}")
    for n, c, hp, wp, k, s in SHAPES:
        oh, ow = out_extent(hp, k, s), out_extent(wp, k, s)
        x = rng.standard_normal((n, c, hp, wp)).astype(np.float32)
        cols = fast.im2col(x, k, s, oh, ow)
        assert np.array_equal(cols, slow.im2col(x, k, s, oh, ow))
        cases = {
            "im2col": (lambda m: m.im2col(x, k, s, oh, ow)),
            "col2im": (lambda m: m.col2im(cols, x.shape, k, s, oh, ow)),
        }
        for op, fn in cases.items():
            t_slow = min(timeit.repeat(lambda: fn(slow), number=1, repeat=repeat)) * 1e3
            t_fast = min(timeit.repeat(lambda: fn(fast), number=1, repeat=repeat)) * 1e3
            label = f"{n}x{c}x{hp}x{wp} k{k}s{s}"
            print(f"{label:<32}{op:<8}{t_slow:>10.3f}{t_fast:>11.3f}{t_slow / t_fast:>8.1f}x")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    bench(parser.parse_args().repeat)
