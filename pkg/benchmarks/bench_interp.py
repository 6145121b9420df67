"""Compare the compiled and pure-Python interpolation kernels.

Usage: python benchmarks/bench_interp.py [--points N] [--repeat R]
"""

import argparse
import math
import timeit

import numpy as np

from decouple import kernels
from decouple.grid import GridSpec

CASES = [
    ("1d periodic cubic", GridSpec([(-math.pi, math.pi)], [628], "periodic"), 3),
    ("2d linearExtrapolate cubic", GridSpec([(-8, 8), (-4, 4)], [161, 51]), 6),
    ("2d clampGradient multilinear", GridSpec([(-8, 8), (-4, 4)], [161, 51], "clampGradient", "multilinear"), 6),
    ("3d linearExtrapolate cubic", GridSpec([(-1, 1)] * 3, [21, 21, 21]), 2),
]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=25_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not kernels.compiled_available():
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    print(f"{'case':32s} {'python [s]':>11s} {'cython [s]':>11s} {'speedup':>8s}  identical")
    for name, g, channels in CASES:
        values = rng.standard_normal((g.size, channels))
        lo, hi = g.lo, g.lo + g.spacing * np.array(g.nodes)
        pts = rng.uniform(lo - 0.1 * (hi - lo), hi + 0.1 * (hi - lo), size=(args.points, g.n))
        call = (values, g.lo, g.spacing, np.array(g.nodes), g.boundary_policy, g.interpolation, pts)
        t_py = min(timeit.repeat(lambda: kernels.interpolate_python(*call), number=1, repeat=args.repeat))
        t_cy = min(timeit.repeat(lambda: kernels.interpolate_compiled(*call), number=1, repeat=args.repeat))
        same = np.array_equal(kernels.interpolate_python(*call), kernels.interpolate_compiled(*call))
        print(f"{name:32s} {t_py:11.4f} {t_cy:11.4f} {t_py / t_cy:8.1f}  {same}")


if __name__ == "__main__":
    main()
