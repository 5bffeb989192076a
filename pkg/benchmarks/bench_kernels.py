"""Timing comparison of the compiled kernels against the numpy fallback.

Runs each kernel on representative desk-scale shapes, checks the two
backends agree numerically, and prints best-of-five timings per call.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5] [--number 50]
"""

import argparse
import timeit

import numpy as np

from skelgen import kernels
from skelgen.kernels import _pure


def compiled_impls():
    if kernels.backend() != "compiled":
        raise SystemExit("compiled backend not built; reinstall the package "
                         "without SKELGEN_SKIP_EXT")
    return {"nn_dist": kernels.nn_dist,
            "point_seg_dist": kernels.point_seg_dist,
            "masked_softmax": kernels.masked_softmax}


def make_cases(rng):
    pts_a = rng.standard_normal((1000, 3))
    pts_b = rng.standard_normal((1200, 3))
    seg_pts = rng.standard_normal((2000, 3))
    seg_a = rng.standard_normal((300, 3))
    seg_b = seg_a + rng.standard_normal((300, 3))
    scores = rng.standard_normal((64, 30, 30))
    mask = rng.random((64, 30, 30)) > 0.2
    return {
        "nn_dist": (pts_a, pts_b),
        "point_seg_dist": (seg_pts, seg_a, seg_b),
        "masked_softmax": (scores, mask),
    }


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--number", type=int, default=50)
    args = parser.parse_args()

    fast = compiled_impls()
    pure = {"nn_dist": _pure.nn_dist,
            "point_seg_dist": _pure.point_seg_dist,
            "masked_softmax": _pure.masked_softmax}
    cases = make_cases(np.random.default_rng(0))

    print(f"{'kernel':<16} {'python':>12} {'compiled':>12} {'speedup':>9}"
          f" {'max|diff|':>11}")
    for name, case_args in cases.items():
        diff = float(np.max(np.abs(pure[name](*case_args)
                                   - fast[name](*case_args))))
        t_pure = min(timeit.repeat(lambda: pure[name](*case_args),
                                   repeat=args.repeat, number=args.number))
        t_fast = min(timeit.repeat(lambda: fast[name](*case_args),
                                   repeat=args.repeat, number=args.number))
        per_pure = t_pure / args.number
        per_fast = t_fast / args.number
        print(f"{name:<16} {per_pure * 1e3:>10.3f}ms {per_fast * 1e3:>10.3f}ms"
              f" {per_pure / per_fast:>8.1f}x {diff:>11.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
