"""Time the compiled kernel reductions against the NumPy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat R]
"""
import argparse
import timeit

import numpy as np

from diffsim import _pykernels

try:
    from diffsim import _ckernels
except ImportError:  # extension not built
    _ckernels = None

CASES = [(800, 49), (1600, 49), (3200, 49), (800, 3), (5000, 3)]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'N':>6} {'n':>4} {'second':>6} {'python_us':>10} {'cython_us':>10} {'speedup':>8}")
    for N, n in CASES:
        s = rng.normal(size=(N, n))
        x = rng.normal(size=n)
        for second in (False, True):
            tp = min(timeit.repeat(lambda: _pykernels.kernel_stats(s, x, 0.5, second),
                                   number=args.repeat, repeat=3)) / args.repeat
            if _ckernels is None:
                print(f"{N:>6} {n:>4} {second!s:>6} {tp * 1e6:>10.1f} {'n/a':>10} {'n/a':>8}")
                continue
            tc = min(timeit.repeat(lambda: _ckernels.kernel_stats(s, x, 0.5, second),
                                   number=args.repeat, repeat=3)) / args.repeat
            print(f"{N:>6} {n:>4} {second!s:>6} {tp * 1e6:>10.1f} {tc * 1e6:>10.1f} {tp / tc:>8.2f}")


if __name__ == "__main__":
    main()
