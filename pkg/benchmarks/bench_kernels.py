"""Compare the compiled and numpy line kernels.

Run from the repository root after building the extension::

    python benchmarks/bench_kernels.py [--repeat 5]

Each case is timed with both backends and the outputs are checked for
bitwise equality.
"""
import argparse
import timeit

import numpy as np

from slicesr import kernels
from slicesr.acquisition import AcquisitionSpec, degrade_along_axis, make_profile
from slicesr.grid import GridSpec1D, bspline_coefficients, derive_output_grid, resample_array


def cases(rng):
    vol = rng.random((64, 64, 64))
    lines = rng.random((4096, 64))
    patches = rng.random((128, 40, 8))
    src = GridSpec1D(13, 5.0)
    lr = rng.random((64, 64, 13))
    profile = make_profile("gaussian", 4.0)
    spec = AcquisitionSpec(4.0, 1.0, 1.0)
    return {
        "prefilter 4096x64": lambda b: bspline_coefficients(lines, backend=b),
        "linear 64^3 -> 0.7": lambda b: resample_array(
            vol, 2, GridSpec1D(64, 1.0), derive_output_grid(GridSpec1D(64, 1.0), 0.7),
            "linear", backend=b),
        "cubic 64x64x13 -> 65": lambda b: resample_array(
            lr, 2, src, derive_output_grid(src, 1.0), "cubic-bspline", backend=b),
        "degrade batch 128x40x8": lambda b: degrade_along_axis(
            patches, 1, profile, spec, GridSpec1D.from_first(40, 1.0), backend=b)[0],
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if kernels.BACKEND != "cython":
        print("compiled kernels not available; build with `pip install -e . --no-build-isolation`")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'case':28s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}  bitwise")
    for name, fn in cases(rng).items():
        same = np.array_equal(fn("python"), fn("cython"))
        t = {}
        for backend in ("python", "cython"):
            timer = timeit.Timer(lambda: fn(backend))
            loops, _ = timer.autorange()
            t[backend] = min(timer.repeat(args.repeat, loops)) / loops * 1e3
        print(f"{name:28s} {t['python']:10.3f} {t['cython']:10.3f} "
              f"{t['python'] / t['cython']:7.1f}x  {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
