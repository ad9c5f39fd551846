"""Density-map partitioning into human-verifiable near-integer regions.

The pipeline: pick the highest peak of the smoothed map among pixels not yet
explored, greedily expand a region around it, keep the expansion prefix that
minimizes the region objective, repeat while at least one object's worth of
mass remains, then flood-fill the leftovers into background regions and merge
everything below the minimum area into its longest-boundary neighbour.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .density import SmoothKernel, smooth

FOREGROUND = "foreground"
BACKGROUND = "background"


@dataclass(frozen=True)
class SegmentationConfig:
    count_limit: int = 4
    area_lower: int = 250
    area_upper: int = 1250
    zero_fraction_max: float = 0.5
    merge_threshold: float | None = None
    smooth_sigma: float = 1.5
    downsample_factor: int = 4

    def __post_init__(self):
        if not 0 < self.area_lower < self.area_upper:
            raise ValueError("need 0 < area_lower < area_upper")
        if self.count_limit < 1:
            raise ValueError("count_limit must be >= 1")
        if not 0 < self.zero_fraction_max <= 1:
            raise ValueError("zero_fraction_max must be in (0, 1]")

    @property
    def merge_area(self) -> float:
        return self.area_lower / 2 if self.merge_threshold is None else self.merge_threshold


@dataclass(frozen=True)
class Region:
    id: int
    pixels: np.ndarray  # (k, 2) int32 (row, col)
    sum: float
    area: int
    kind: str


@dataclass
class Segmentation:
    labels: np.ndarray  # int32 H x W, every pixel labelled exactly once
    regions: list[Region]
    source: np.ndarray

    @property
    def n_regions(self) -> int:
        return len(self.regions)


def objective_h(r_s: float, r_a: int, config: SegmentationConfig) -> float:
    """Region quality: distance to the nearest integer count (relative), an
    under-area penalty, and a hard count-limit overshoot penalty."""
    if r_a < 1:
        raise ValueError("region area must be >= 1")
    near = float(np.ceil(r_s - 0.5))
    t1 = abs(r_s - near) / max(1.0, near)
    t2 = max(0.0, config.area_lower - r_a) / config.area_lower
    t3 = float(np.ceil(max(0.0, r_s - config.count_limit)))
    return t1 + t2 + t3


def _as_claimed_mask(claimed, shape) -> np.ndarray:
    claimed = np.asarray(claimed)
    if claimed.shape != shape:
        raise ValueError(f"claimed map shape {claimed.shape} != grid shape {shape}")
    if claimed.dtype == bool or claimed.dtype == np.uint8:
        return np.ascontiguousarray(claimed.astype(np.uint8))
    return np.ascontiguousarray((claimed >= 0).astype(np.uint8))


def _check_grid(values: np.ndarray) -> None:
    if values.ndim != 2:
        raise ValueError("grid must be 2-D")
    if values.shape[0] > _kernels.MAX_SIDE or values.shape[1] > _kernels.MAX_SIDE:
        raise ValueError(f"grid sides must be <= {_kernels.MAX_SIDE}")
    if not np.all(np.isfinite(values)) or values.min() < 0:
        raise ValueError("grid values must be finite and non-negative")


def expand_peak(grid, smoothed, claimed, peak, config: SegmentationConfig) -> Region:
    """Run one peak expansion and return the objective-minimizing prefix.

    `smoothed` is accepted for signature symmetry with the segmentation loop
    (peak bookkeeping happens on the smoothed map there); the expansion itself
    reads only the raw densities.  Inputs are not mutated.
    """
    values = np.ascontiguousarray(np.asarray(grid, dtype=np.float64))
    _check_grid(values)
    mask = _as_claimed_mask(claimed, values.shape)
    pr, pc = int(peak[0]), int(peak[1])
    if mask[pr, pc]:
        raise ValueError(f"peak ({pr}, {pc}) is already claimed")
    blocked = mask.copy()
    rows, cols, _, n_keep = _kernels.expand_core(
        values,
        mask,
        blocked,
        pr,
        pc,
        config.area_lower,
        config.area_upper,
        config.count_limit,
        config.zero_fraction_max,
    )
    kept = np.stack((rows[:n_keep], cols[:n_keep]), axis=1).astype(np.int32)
    return Region(
        id=0,
        pixels=kept,
        sum=float(values[kept[:, 0], kept[:, 1]].sum()),
        area=n_keep,
        kind=FOREGROUND,
    )


def expansion_trace(grid, claimed, peak, config: SegmentationConfig):
    """Full admission sequence of one expansion, for prefix-level auditing."""
    values = np.ascontiguousarray(np.asarray(grid, dtype=np.float64))
    mask = _as_claimed_mask(claimed, values.shape)
    blocked = mask.copy()
    rows, cols, n_exp, n_keep = _kernels.expand_core(
        values,
        mask,
        blocked,
        int(peak[0]),
        int(peak[1]),
        config.area_lower,
        config.area_upper,
        config.count_limit,
        config.zero_fraction_max,
    )
    return rows[:n_exp].copy(), cols[:n_exp].copy(), n_keep


def _seed_state(seed: int) -> int:
    return (int(seed) * 2654435761 + 1) % _kernels._LCG_M


def split_background(grid, claimed, config: SegmentationConfig, seed: int = 0) -> list[Region]:
    """Partition unclaimed pixels into connected regions of area <= area_upper.

    Flood fill starts at pseudo-random unclaimed pixels drawn from the seeded
    generator, so the partition is reproducible.
    """
    values = np.ascontiguousarray(np.asarray(grid, dtype=np.float64))
    mask = _as_claimed_mask(claimed, values.shape)
    h, w = values.shape
    # claimed pixels get a dummy label 0 so the flood only touches the rest
    labels = np.ascontiguousarray(np.where(mask > 0, 0, -1).astype(np.int32))
    _kernels.bg_split_core(labels.ravel(), h, w, int(config.area_upper), 1, _seed_state(seed))
    regions = []
    for lab in range(1, int(labels.max()) + 1):
        sel = np.argwhere(labels == lab).astype(np.int32)
        regions.append(
            Region(
                id=lab - 1,
                pixels=sel,
                sum=float(values[sel[:, 0], sel[:, 1]].sum()),
                area=int(sel.shape[0]),
                kind=BACKGROUND,
            )
        )
    return regions


def _boundary_table(labels: np.ndarray) -> dict[tuple[int, int], int]:
    pairs = {}
    a = labels[:, :-1].ravel()
    b = labels[:, 1:].ravel()
    m = a != b
    lo = np.minimum(a[m], b[m])
    hi = np.maximum(a[m], b[m])
    a2 = labels[:-1, :].ravel()
    b2 = labels[1:, :].ravel()
    m2 = a2 != b2
    lo = np.concatenate((lo, np.minimum(a2[m2], b2[m2])))
    hi = np.concatenate((hi, np.maximum(a2[m2], b2[m2])))
    if lo.size:
        combo = lo.astype(np.int64) * (labels.max() + 1) + hi
        uniq, counts = np.unique(combo, return_counts=True)
        base = labels.max() + 1
        for u, cnt in zip(uniq, counts):
            pairs[(int(u // base), int(u % base))] = int(cnt)
    return pairs


def _merge_labels(labels, values, kinds, merge_area):
    """Union small regions into their longest-boundary neighbours until none
    below the threshold remain (regions with no neighbour are kept)."""
    n = len(kinds)
    areas = np.bincount(labels.ravel(), minlength=n).astype(np.int64)
    sums = np.bincount(labels.ravel(), weights=values.ravel(), minlength=n)
    adj: dict[int, dict[int, int]] = {i: {} for i in range(n)}
    for (a, b), cnt in _boundary_table(labels).items():
        adj[a][b] = cnt
        adj[b][a] = cnt

    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    # worklist of potentially-small roots, processed smallest id first
    pending = [lab for lab in range(n) if areas[lab] < merge_area and adj[lab]]
    heapq.heapify(pending)
    while pending:
        candidate = heapq.heappop(pending)
        if parent[candidate] != candidate or areas[candidate] >= merge_area:
            continue
        neighbours = adj[candidate]
        if not neighbours:
            continue
        target = max(neighbours, key=lambda t: (neighbours[t], -t))
        parent[candidate] = target
        areas[target] += areas[candidate]
        sums[target] += sums[candidate]
        for other, cnt in neighbours.items():
            if other == target:
                continue
            adj[target][other] = adj[target].get(other, 0) + cnt
            adj[other][target] = adj[other].get(target, 0) + cnt
            del adj[other][candidate]
        del adj[target][candidate]
        adj[candidate] = {}
        if areas[target] < merge_area and adj[target]:
            heapq.heappush(pending, target)

    root_of = np.fromiter((find(i) for i in range(n)), dtype=np.int64, count=n)
    merged = root_of[labels]
    # compact labels in row-major first-appearance order
    uniq, first = np.unique(merged.ravel(), return_index=True)
    by_first = uniq[np.argsort(first)]
    remap = np.zeros(n, dtype=np.int32)
    for new, old in enumerate(by_first):
        remap[old] = new
    final = remap[merged].astype(np.int32)
    final_kinds = [kinds[old] for old in by_first]
    return final, final_kinds


def _regions_from_labels(labels, values, kinds) -> list[Region]:
    flat = labels.ravel()
    w = labels.shape[1]
    order = np.argsort(flat, kind="stable")
    sorted_labels = flat[order]
    boundaries = np.flatnonzero(np.diff(sorted_labels)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [flat.size]))
    sums = np.bincount(flat, weights=values.ravel(), minlength=len(kinds))
    regions = []
    for s, e in zip(starts, ends):
        lab = int(sorted_labels[s])
        idx = order[s:e]
        pixels = np.stack((idx // w, idx % w), axis=1).astype(np.int32)
        regions.append(
            Region(
                id=lab,
                pixels=pixels,
                sum=float(sums[lab]),
                area=int(e - s),
                kind=kinds[lab],
            )
        )
    return regions


def segmentation_from_labels(labels, values, kinds) -> Segmentation:
    """Build a Segmentation from a complete label map; stats derive from the map."""
    labels = np.asarray(labels, dtype=np.int32)
    values = np.asarray(values, dtype=np.float64)
    if labels.min() < 0:
        raise ValueError("label map must cover every pixel")
    return Segmentation(
        labels=labels,
        regions=_regions_from_labels(labels, values, list(kinds)),
        source=values,
    )


def merge_small(segmentation: Segmentation, config: SegmentationConfig) -> Segmentation:
    """Merge every region below the merge threshold into the neighbour sharing
    the longest boundary (ties to the smaller label); repeats to fixpoint."""
    kinds = [r.kind for r in sorted(segmentation.regions, key=lambda r: r.id)]
    labels, final_kinds = _merge_labels(
        segmentation.labels, segmentation.source, kinds, config.merge_area
    )
    return Segmentation(
        labels=labels,
        regions=_regions_from_labels(labels, segmentation.source, final_kinds),
        source=segmentation.source,
    )


def segment(grid, config: SegmentationConfig | None = None, seed: int = 0) -> Segmentation:
    """Partition a working-resolution density grid into labelled regions.

    The caller is expected to have downsampled to working resolution already
    (see `config.downsample_factor`); smoothing for peak selection happens
    here.  Identical grid, config and seed give a bit-identical label map.
    """
    config = config or SegmentationConfig()
    values = np.ascontiguousarray(np.asarray(grid, dtype=np.float64))
    _check_grid(values)
    h, w = values.shape
    n_px = h * w

    smoothed = smooth(values, SmoothKernel.for_sigma(config.smooth_sigma))
    smoothed_flat = smoothed.ravel()
    order = np.argsort(-smoothed_flat, kind="stable")

    blocked = np.zeros((h, w), np.uint8)
    blocked_flat = blocked.ravel()
    claimed = np.zeros((h, w), np.uint8)
    labels = np.full((h, w), -1, dtype=np.int32)
    kinds: list[str] = []
    lcg = _seed_state(seed)

    remaining = float(values.sum())
    ptr = 0
    next_label = 0
    # tolerance absorbs float accumulation noise so a grid holding exactly
    # k unit blobs yields k foreground expansions
    while remaining >= 1.0 - 1e-9:
        while ptr < n_px and blocked_flat[order[ptr]]:
            ptr += 1
        if ptr >= n_px:
            break
        p = int(order[ptr])
        if smoothed_flat[p] <= 0.0:
            # only zero-density peaks left: draw a random unexplored pixel
            free = np.flatnonzero(blocked_flat == 0)
            lcg = _kernels.lcg_next(lcg)
            p = int(free[lcg % free.size])
        pr, pc = divmod(p, w)
        rows, cols, n_explored, n_keep = _kernels.expand_core(
            values,
            claimed,
            blocked,
            pr,
            pc,
            config.area_lower,
            config.area_upper,
            config.count_limit,
            config.zero_fraction_max,
        )
        kr = rows[:n_keep]
        kc = cols[:n_keep]
        labels[kr, kc] = next_label
        claimed[kr, kc] = 1
        kinds.append(FOREGROUND)
        next_label += 1
        # the whole explored sequence is spent: pixels beyond the kept prefix
        # can never seed a later peak, so their mass leaves the budget too
        remaining -= float(values[rows[:n_explored], cols[:n_explored]].sum())

    labels = np.ascontiguousarray(labels)
    n_before = next_label
    next_label, lcg = _kernels.bg_split_core(
        labels.ravel(), h, w, int(config.area_upper), next_label, lcg
    )
    kinds.extend([BACKGROUND] * (next_label - n_before))

    final_labels, final_kinds = _merge_labels(labels, values, kinds, config.merge_area)
    return Segmentation(
        labels=final_labels,
        regions=_regions_from_labels(final_labels, values, final_kinds),
        source=values,
    )


def working_config_for(shape, config: SegmentationConfig) -> SegmentationConfig:
    """Scale the area bounds down for small working grids.

    The stock bounds suit maps of tens of thousands of working pixels, at
    roughly one sixtieth of the map per minimum region; a desk-scale grid
    would otherwise collapse into one region.  Keeps the stock values
    whenever the grid is large enough for them.
    """
    n_px = int(shape[0]) * int(shape[1])
    lower = min(config.area_lower, max(16, n_px // 60))
    if lower == config.area_lower:
        return config
    return replace(config, area_lower=lower, area_upper=5 * lower, merge_threshold=None)
