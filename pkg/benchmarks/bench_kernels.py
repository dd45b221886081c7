"""Compare the compiled convolution kernels with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]

Times forward, input-gradient and weight-gradient passes for the layer shapes
used by the teacher network at 64x64 and checks that both backends agree.
"""

import argparse
import timeit

import numpy as np

from holoforge.kernels import _pykernels

try:
    from holoforge.kernels import _ckernels
except ImportError:
    _ckernels = None

# (batch, in channels, out channels, size, kernel)
SHAPES = [
    (8, 3, 16, 64, 3),
    (8, 16, 16, 64, 3),
    (8, 32, 32, 32, 3),
    (8, 64, 64, 16, 3),
    (8, 48, 16, 64, 3),
    (8, 16, 16, 64, 1),
    (2, 8, 8, 64, 5),
]


def bench(fn, repeats):
    return min(timeit.repeat(fn, number=1, repeat=repeats))


def run(repeats: int) -> None:
    if _ckernels is None:
        print("compiled extension not built; only the fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'shape':<24}{'pass':<10}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}{'max diff':>11}")
    for n, c, o, s, k in SHAPES:
        x = rng.normal(size=(n, c, s, s))
        w = rng.normal(size=(o, c, k, k))
        b = rng.normal(size=o)
        g = rng.normal(size=(n, o, s, s))
        passes = {
            "forward": lambda m: m.conv2d_forward(x, w, b),
            "grad_in": lambda m: m.conv2d_backward_input(g, w),
            "grad_w": lambda m: m.conv2d_backward_weight(x, g, k),
        }
        label = f"{n}x{c}->{o} {s}px k{k}"
        for name, call in passes.items():
            t_py = bench(lambda: call(_pykernels), repeats)
            if _ckernels is None:
                print(f"{label:<24}{name:<10}{t_py * 1e3:>10.2f}{'-':>11}{'-':>9}{'-':>11}")
                continue
            t_c = bench(lambda: call(_ckernels), repeats)
            diff = np.max(np.abs(call(_pykernels) - call(_ckernels)))
            print(f"{label:<24}{name:<10}{t_py * 1e3:>10.2f}{t_c * 1e3:>11.2f}"
                  f"{t_py / t_c:>8.1f}x{diff:>11.1e}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    run(parser.parse_args().repeats)
