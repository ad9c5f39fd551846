"""Simulated user: count binning, region-selection strategies, feedback noise."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adaptation import CountRange
from .segmentation import Region, Segmentation


class RegionsExhausted(RuntimeError):
    """Every region of the current segmentation has already been selected."""


@dataclass(frozen=True)
class RangeFamily:
    """The bin ladder offered to the user: {(-inf,0], (0,r], ..., (C-r,C], (C,inf)}."""

    count_limit: float = 4.0
    interval: float = 1.0

    def __post_init__(self):
        n = self.count_limit / self.interval
        if self.count_limit <= 0 or self.interval <= 0 or abs(n - round(n)) > 1e-9:
            raise ValueError("count_limit must be a positive multiple of interval")

    @property
    def bins(self) -> list[CountRange]:
        n = int(round(self.count_limit / self.interval))
        out = [CountRange(-math.inf, 0.0)]
        for k in range(n):
            out.append(CountRange(k * self.interval, (k + 1) * self.interval))
        out.append(CountRange(self.count_limit, math.inf))
        return out

    def labels(self) -> list[str]:
        return [b.label() for b in self.bins]


def bin_count(x: float, family: RangeFamily) -> CountRange:
    """The unique bin containing x (x >= 0; zero mass maps to the empty bin)."""
    if x < 0:
        raise ValueError("counts cannot be negative")
    bins = family.bins
    if x == 0:
        return bins[0]
    if x > family.count_limit:
        return bins[-1]
    return bins[int(math.ceil(x / family.interval))]


@dataclass(frozen=True)
class SimStrategy:
    kind: str = "random"  # random | background_prior | error_based
    seed: int = 0
    noise: str = "none"  # none | moderate | large

    def __post_init__(self):
        if self.kind not in ("random", "background_prior", "error_based"):
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.noise not in ("none", "moderate", "large"):
            raise ValueError(f"unknown noise level {self.noise!r}")

    def make_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def _region_sums(segmentation: Segmentation, grid: np.ndarray) -> np.ndarray:
    n = max(r.id for r in segmentation.regions) + 1
    return np.bincount(segmentation.labels.ravel(), weights=grid.ravel(), minlength=n)


def select_region(
    segmentation: Segmentation,
    gt: np.ndarray,
    pred: np.ndarray,
    strategy: SimStrategy,
    already_selected: set[int],
    rng: np.random.Generator | None = None,
) -> Region:
    """Pick the next region to give feedback on, without replacement."""
    rng = strategy.make_rng() if rng is None else rng
    remaining = [r for r in segmentation.regions if r.id not in already_selected]
    if not remaining:
        raise RegionsExhausted("all regions of this segmentation already selected")

    if strategy.kind == "random":
        return remaining[int(rng.integers(len(remaining)))]

    gt_sums = _region_sums(segmentation, gt)
    if strategy.kind == "background_prior":
        empty = [r for r in remaining if gt_sums[r.id] < 0.5]
        pool = empty if empty else remaining
        return pool[int(rng.integers(len(pool)))]

    pred_sums = _region_sums(segmentation, pred)
    # ties break toward the smaller region id
    return max(remaining, key=lambda r: (abs(pred_sums[r.id] - gt_sums[r.id]), -r.id))


def noisy_truth(x: float, family: RangeFamily, level: str, rng: np.random.Generator) -> float:
    """Add the configured integer estimation error, clamped at zero."""
    if level == "none":
        return x
    frac = 0.3 if level == "moderate" else 0.5
    k = int(round(frac * family.count_limit))
    offset = int(rng.integers(-k, k + 1))
    return max(0.0, x + offset)


def simulate_interaction(session, strategy: SimStrategy, family: RangeFamily, rng=None):
    """One simulated feedback round: pick a region, look up its true count,
    perturb per the noise level, bin it, and submit to the session."""
    rng = strategy.make_rng() if rng is None else rng
    region = select_region(
        session.full_segmentation,
        session.ground_truth,
        session.prediction,
        strategy,
        session.selected_ids,
        rng,
    )
    gt_mass = float(session.ground_truth[region.pixels[:, 0], region.pixels[:, 1]].sum())
    reported = noisy_truth(gt_mass, family, strategy.noise, rng)
    chosen = bin_count(reported, family)
    return session.submit(region.id, chosen)
