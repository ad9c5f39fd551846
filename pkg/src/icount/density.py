"""Density grids: synthesis from dot scenes, smoothing, resampling, dot placement.

A density grid is a 2-D float64 array of non-negative mass per pixel; the sum
over any pixel set is the object count attributed to that set.  All functions
here are pure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve1d

MIN_GRID_SIDE = 8


@dataclass(frozen=True)
class DotScene:
    """Synthetic dot layout: object centres plus the rendering kernel width."""

    height: int
    width: int
    sigma: float
    dots: tuple[tuple[float, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.height < MIN_GRID_SIDE or self.width < MIN_GRID_SIDE:
            raise ValueError(f"scene must be at least {MIN_GRID_SIDE}px per side")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        for x, y in self.dots:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValueError(f"dot ({x}, {y}) outside {self.width}x{self.height} grid")

    def to_json(self) -> str:
        return json.dumps(
            {
                "height": self.height,
                "width": self.width,
                "sigma": self.sigma,
                "dots": [[float(x), float(y)] for x, y in self.dots],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "DotScene":
        data = json.loads(text)
        return cls(
            height=int(data["height"]),
            width=int(data["width"]),
            sigma=float(data["sigma"]),
            dots=tuple((float(x), float(y)) for x, y in data["dots"]),
        )

    @classmethod
    def load(cls, path) -> "DotScene":
        return cls.from_json(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


@dataclass(frozen=True)
class SmoothKernel:
    """Normalized, truncated Gaussian used to pre-smooth maps before peak picking."""

    sigma: float
    radius: int

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.radius < math.ceil(2 * self.sigma):
            raise ValueError("radius must be at least ceil(2*sigma)")

    @classmethod
    def for_sigma(cls, sigma: float) -> "SmoothKernel":
        return cls(sigma=sigma, radius=math.ceil(4 * sigma))

    def weights_1d(self) -> np.ndarray:
        xs = np.arange(-self.radius, self.radius + 1, dtype=np.float64)
        w = np.exp(-0.5 * (xs / self.sigma) ** 2)
        return w / w.sum()

    def weights_2d(self) -> np.ndarray:
        w = self.weights_1d()
        return np.outer(w, w)


def render_density(scene: DotScene) -> np.ndarray:
    """Render unit-mass truncated Gaussians at each dot.

    Each dot's kernel is truncated at radius ceil(4*sigma), clipped to the
    grid, and renormalized, so every dot contributes exactly mass 1.
    """
    grid = np.zeros((scene.height, scene.width), dtype=np.float64)
    radius = math.ceil(4 * scene.sigma)
    inv_two_s2 = 1.0 / (2.0 * scene.sigma**2)
    for x, y in scene.dots:
        cx, cy = int(round(x)), int(round(y))
        r0 = max(0, cy - radius)
        r1 = min(scene.height, cy + radius + 1)
        c0 = max(0, cx - radius)
        c1 = min(scene.width, cx + radius + 1)
        rows = np.arange(r0, r1, dtype=np.float64)
        cols = np.arange(c0, c1, dtype=np.float64)
        d2 = (rows[:, None] - y) ** 2 + (cols[None, :] - x) ** 2
        patch = np.exp(-d2 * inv_two_s2)
        patch[d2 > radius * radius] = 0.0
        total = patch.sum()
        if total > 0:
            grid[r0:r1, c0:c1] += patch / total
    return grid


def smooth(grid, kernel: SmoothKernel) -> np.ndarray:
    """Separable Gaussian smoothing with reflective borders (mass preserving)."""
    values = np.asarray(grid, dtype=np.float64)
    w = kernel.weights_1d()
    out = convolve1d(values, w, axis=0, mode="reflect")
    out = convolve1d(out, w, axis=1, mode="reflect")
    return out


def downsample_sum(grid, factor: int) -> np.ndarray:
    """Sum-pool by `factor`, zero-padding to a multiple of `factor` first.

    Sum pooling (not averaging) keeps region integrals meaning object counts
    at every resolution.
    """
    if factor not in (2, 4, 8):
        raise ValueError(f"factor must be 2, 4 or 8, got {factor}")
    values = np.asarray(grid, dtype=np.float64)
    h, w = values.shape
    ph = (-h) % factor
    pw = (-w) % factor
    if ph or pw:
        values = np.pad(values, ((0, ph), (0, pw)))
    hh, ww = values.shape
    return values.reshape(hh // factor, factor, ww // factor, factor).sum(axis=(1, 3))


def upsample_labels(labels, factor: int, target_h: int, target_w: int) -> np.ndarray:
    """Nearest-neighbour label replication by `factor`, cropped to the target."""
    labels = np.asarray(labels)
    full_h = labels.shape[0] * factor
    full_w = labels.shape[1] * factor
    if not (full_h - factor < target_h <= full_h and full_w - factor < target_w <= full_w):
        raise ValueError(
            f"target {target_h}x{target_w} incompatible with "
            f"{labels.shape[0]}x{labels.shape[1]} labels at factor {factor}"
        )
    out = np.repeat(np.repeat(labels, factor, axis=0), factor, axis=1)
    return out[:target_h, :target_w]


def place_dots(grid, region_pixels, radius: float) -> list[tuple[float, float]]:
    """Greedy peak picking with non-maximum suppression inside one region.

    Returns round(region mass) points as (x, y); stops early only if every
    region pixel is suppressed.  Ties at the maximum break in row-major order.
    """
    values = np.asarray(grid, dtype=np.float64)
    coords = np.asarray(region_pixels, dtype=np.int64)
    if coords.size == 0:
        raise ValueError("region must be non-empty")
    rows = coords[:, 0]
    cols = coords[:, 1]
    dens = values[rows, cols]
    k = int(np.rint(dens.sum()))
    # sort by (-density, flat index): the first alive entry is always the
    # max-density unsuppressed pixel with row-major tiebreak
    order = np.lexsort((rows * values.shape[1] + cols, -dens))
    rows_s = rows[order].astype(np.float64)
    cols_s = cols[order].astype(np.float64)
    alive = np.ones(len(order), dtype=bool)
    dots: list[tuple[float, float]] = []
    r2 = radius * radius
    for _ in range(k):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        best = idx[0]
        dots.append((float(cols_s[best]), float(rows_s[best])))
        d2 = (rows_s - rows_s[best]) ** 2 + (cols_s - cols_s[best]) ** 2
        alive &= d2 > r2
    return dots
