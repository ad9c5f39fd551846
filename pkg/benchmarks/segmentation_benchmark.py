"""Compare the compiled kernels against the pure fallback paths.

Usage: python benchmarks/segmentation_benchmark.py [--grids N] [--side PX]

Times the full segmentation pipeline and the counting head's convolution on
identical inputs under both backends.  Label maps must match bit-for-bit
between the segmentation backends; the conv outputs agree to float noise.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from icount import _kernels
from icount.bench import make_dot_scene
from icount.density import downsample_sum, render_density
from icount.segmentation import SegmentationConfig, segment


def time_segment(grids, monkeyed=None):
    out = []
    times = []
    for i, grid in enumerate(grids):
        t0 = time.perf_counter()
        seg = segment(grid, SegmentationConfig(), seed=i)
        times.append(time.perf_counter() - t0)
        out.append(seg.labels)
    return out, times


def time_conv(x, kernel, fn, repeats=20):
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    fn(xp, kernel)  # warm-up / compile
    t0 = time.perf_counter()
    for _ in range(repeats):
        out = fn(xp, kernel)
    return out, (time.perf_counter() - t0) / repeats


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--grids", type=int, default=10)
    parser.add_argument("--side", type=int, default=1024, help="full-resolution scene side")
    args = parser.parse_args()

    if _kernels.expand_core_nb is None:
        print("numba backend unavailable (ICOUNT_DISABLE_NUMBA set or numba missing);")
        print("only the pure path can be timed.")
        return 1

    rng = np.random.default_rng(0)
    grids = []
    for _ in range(args.grids):
        n = int(rng.integers(80, 250))
        scene = make_dot_scene(rng, args.side, n, 8.0, min_sep=70.0)
        grids.append(downsample_sum(render_density(scene), 4))
    print(f"{args.grids} grids at {grids[0].shape[0]}x{grids[0].shape[1]} working resolution")

    # compiled path
    _kernels.expand_core = _kernels.expand_core_nb
    _kernels.bg_split_core = _kernels.bg_split_core_nb
    segment(grids[0], SegmentationConfig(), seed=0)  # compile before timing
    labels_nb, t_nb = time_segment(grids)

    # pure path
    _kernels.expand_core = _kernels.expand_core_py
    _kernels.bg_split_core = _kernels.bg_split_core_py
    labels_py, t_py = time_segment(grids)

    _kernels.expand_core = _kernels.expand_core_nb
    _kernels.bg_split_core = _kernels.bg_split_core_nb

    identical = all(np.array_equal(a, b) for a, b in zip(labels_nb, labels_py))
    med_nb = float(np.median(t_nb)) * 1000
    med_py = float(np.median(t_py)) * 1000
    print(f"segmentation  numba  median {med_nb:8.1f} ms")
    print(f"segmentation  numpy  median {med_py:8.1f} ms   ({med_py / med_nb:.1f}x slower)")
    print(f"label maps bit-identical across backends: {identical}")

    x = rng.normal(size=(6, 256, 256))
    kernel = rng.normal(size=(6, 6, 3, 3))
    out_nb, conv_nb = time_conv(x, kernel, _kernels.conv3x3_padded_nb)
    out_py, conv_py = time_conv(x, kernel, _kernels._conv3x3_numpy)
    max_diff = float(np.abs(out_nb - out_py).max())
    print(f"conv 3x3      numba  mean   {conv_nb * 1000:8.1f} ms")
    print(f"conv 3x3      numpy  mean   {conv_py * 1000:8.1f} ms   ({conv_py / conv_nb:.1f}x slower)")
    print(f"conv outputs max abs difference: {max_diff:.2e}")
    return 0 if identical else 1


if __name__ == "__main__":
    raise SystemExit(main())
