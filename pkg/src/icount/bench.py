"""Experiment runner: scene suites, interactive sessions, MAE/RMSE reports."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .adaptation import AdaptConfig, FeedbackRecord, adapt
from .counter import Miscalibration, ToyCounter, synthesize_counter
from .density import DotScene, downsample_sum, render_density
from .feedback import (
    RangeFamily,
    RegionsExhausted,
    SimStrategy,
    bin_count,
    noisy_truth,
    select_region,
    simulate_interaction,
)
from .session import CountingSession


def make_dot_scene(rng, side, n_dots, sigma, min_sep=None, margin=None) -> DotScene:
    """Dart-throwing scene synthesis with a minimum dot separation."""
    margin = 4 * sigma + 2 if margin is None else margin
    min_sep = 4 * sigma if min_sep is None else min_sep
    pts = np.empty((0, 2))
    sep2 = min_sep**2
    for _ in range(max(1, n_dots) * 80):
        if len(pts) >= n_dots:
            break
        cand = rng.uniform(margin, side - margin, size=2)
        if pts.size == 0 or ((pts - cand) ** 2).sum(axis=1).min() >= sep2:
            pts = np.vstack([pts, cand[None]])
    return DotScene(
        height=side,
        width=side,
        sigma=sigma,
        dots=tuple((float(x), float(y)) for x, y in pts),
    )


def partition_suite_grids(n_grids: int, seed: int = 0):
    """Working-resolution grids for the partition checks.

    Mixes three regimes: smooth moderate-density blob fields, sharp
    well-separated dots at high counts (up to 400), and near-empty edge
    cases.  Working sides span 64 to 256; totals span 0 to 400.
    """
    rng = np.random.default_rng(seed)
    grids = []
    for i in range(n_grids):
        mode = i % 10
        if mode < 5:
            side = int(rng.choice([256, 384, 512, 768, 1024]))
            sigma = float(rng.uniform(6, 10))
            cap = int(0.002 * (side // 4) ** 2)
            n = int(rng.integers(1, max(2, cap)))
            scene = make_dot_scene(rng, side, n, sigma, min_sep=12 * sigma)
        elif mode < 9:
            side = int(rng.choice([512, 768, 1024]))
            hi = min(400, (side // 4) ** 2 // 150)
            n = int(rng.integers(hi // 2, hi + 1))
            scene = make_dot_scene(rng, side, n, 2.0, min_sep=48.0)
        else:
            side = int(rng.choice([256, 512]))
            n = int(rng.integers(0, 3))
            scene = make_dot_scene(rng, side, n, 4.0, min_sep=40.0)
        grids.append(downsample_sum(render_density(scene), 4))
    return grids


def metric_mae(preds, gts) -> float:
    preds = np.asarray(preds, dtype=float)
    gts = np.asarray(gts, dtype=float)
    if preds.size == 0 or preds.shape != gts.shape:
        raise ValueError("need equally sized, non-empty prediction/truth lists")
    return float(np.abs(preds - gts).mean())


def metric_rmse(preds, gts) -> float:
    preds = np.asarray(preds, dtype=float)
    gts = np.asarray(gts, dtype=float)
    if preds.size == 0 or preds.shape != gts.shape:
        raise ValueError("need equally sized, non-empty prediction/truth lists")
    return float(np.sqrt(((preds - gts) ** 2).mean()))


@dataclass(frozen=True)
class SceneSuiteSpec:
    # dots must stay resolvable after the x4 pooling, hence the sigma floor
    n_scenes: int = 50
    side_min: int = 96
    side_max: int = 256
    count_min: int = 5
    count_max: int = 60
    sigma_min: float = 3.5
    sigma_max: float = 5.0
    seed: int = 2024


@dataclass(frozen=True)
class ExperimentConfig:
    scenes: SceneSuiteSpec = field(default_factory=SceneSuiteSpec)
    miscal_kind: str = "global_scale"
    miscal_alpha: float = 2.0
    strategy: str = "random"
    noise: str = "none"
    count_limit: float = 4.0
    range_interval: float = 1.0
    interactions: int = 5
    seeds: tuple[int, ...] = (5, 10, 15)
    consecutive: bool = True
    lr: float = 0.02
    steps: int = 10
    reg_weight: float = 0.002

    def __post_init__(self):
        if self.interactions < 0:
            raise ValueError("interactions must be >= 0")
        if not self.seeds:
            raise ValueError("need at least one seed")

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        data = json.loads(text)
        scenes = SceneSuiteSpec(**data.pop("scenes", {}))
        data["seeds"] = tuple(data.get("seeds", cls.seeds))
        return cls(scenes=scenes, **data)

    def to_json(self) -> str:
        data = asdict(self)
        data["seeds"] = list(self.seeds)
        return json.dumps(data, indent=2)

    def adapt_config(self) -> AdaptConfig:
        return AdaptConfig(lr=self.lr, steps=self.steps, reg_weight=self.reg_weight)

    def range_family(self) -> RangeFamily:
        return RangeFamily(count_limit=self.count_limit, interval=self.range_interval)

    def miscalibration(self) -> Miscalibration:
        if self.miscal_kind == "none":
            return Miscalibration.none()
        if self.miscal_kind == "global_scale":
            return Miscalibration.global_scale(self.miscal_alpha)
        raise ValueError(f"unsupported miscalibration for suites: {self.miscal_kind!r}")


def suite_scenes(spec: SceneSuiteSpec) -> list[DotScene]:
    rng = np.random.default_rng(spec.seed)
    scenes = []
    for _ in range(spec.n_scenes):
        side = int(rng.integers(spec.side_min, spec.side_max + 1))
        sigma = float(rng.uniform(spec.sigma_min, spec.sigma_max))
        # scale counts down on small canvases so dots keep breathing room
        cap = max(1, min(spec.count_max, side**2 // 700))
        n = int(rng.integers(min(spec.count_min, cap), cap + 1))
        scenes.append(make_dot_scene(rng, side, n, sigma, min_sep=5 * sigma))
    return scenes


def run_session(
    scene: DotScene,
    miscal: Miscalibration,
    config: ExperimentConfig,
    seed: int,
    scene_id: int = 0,
) -> list[dict]:
    """One interactive session; returns one row per iteration (0 = unadapted).

    Consecutive mode re-segments and adapts after every feedback; the
    non-consecutive variant collects every feedback against the initial
    segmentation and adapts once at the end.  If the simulator exhausts the
    selectable regions the session ends early and the last state carries
    forward.
    """
    features, weights, gt = synthesize_counter(scene, miscal, seed=seed)
    counter = ToyCounter(features, weights, gt)
    family = config.range_family()
    strategy = SimStrategy(kind=config.strategy, seed=seed, noise=config.noise)
    session = CountingSession(
        counter,
        adapt_config=config.adapt_config(),
        range_family=family,
        seed=seed,
    )
    rng = strategy.make_rng()
    gt_total = float(gt.sum())

    def row(iteration):
        return {
            "scene_id": scene_id,
            "seed": seed,
            "iteration": iteration,
            "pred_total": session.predicted_total,
            "gt_total": gt_total,
            "seg_ms": session.segment_ms,
            "adapt_ms": session.adapt_ms,
        }

    rows = [row(0)]
    if config.consecutive:
        for k in range(1, config.interactions + 1):
            try:
                simulate_interaction(session, strategy, family, rng)
            except RegionsExhausted:
                rows.append(row(k))
                continue
            rows.append(row(k))
    else:
        records = []
        for k in range(config.interactions):
            try:
                region = select_region(
                    session.full_segmentation,
                    gt,
                    session.prediction,
                    strategy,
                    session.selected_ids,
                    rng,
                )
            except RegionsExhausted:
                break
            session.selected_ids.add(region.id)
            mass = float(gt[region.pixels[:, 0], region.pixels[:, 1]].sum())
            reported = noisy_truth(mass, family, strategy.noise, rng)
            records.append(
                FeedbackRecord(
                    pixels=session.region_pixels_flat(region.id),
                    count_range=bin_count(reported, family),
                    iteration=0,
                    region_id=region.id,
                )
            )
        for k in range(1, config.interactions):
            rows.append(row(k))
        if records:
            t0 = time.perf_counter()
            session.params, session.prediction, session.last_losses = adapt(
                counter, session.params, session.optimizer, records, config.adapt_config()
            )
            session.adapt_ms = (time.perf_counter() - t0) * 1000.0
        if config.interactions >= 1:
            rows.append(row(config.interactions))
    return rows


def aggregate_rows(rows: list[dict], n_iterations: int) -> list[dict]:
    """Mean MAE/RMSE per iteration, with the standard error across seeds."""
    seeds = sorted({r["seed"] for r in rows})
    out = []
    for it in range(n_iterations + 1):
        seed_mae = []
        seed_rmse = []
        for seed in seeds:
            sel = [r for r in rows if r["seed"] == seed and r["iteration"] == it]
            preds = [r["pred_total"] for r in sel]
            gts = [r["gt_total"] for r in sel]
            seed_mae.append(metric_mae(preds, gts))
            seed_rmse.append(metric_rmse(preds, gts))
        mae = float(np.mean(seed_mae))
        rmse = float(np.mean(seed_rmse))
        se = float(np.std(seed_mae, ddof=1) / math.sqrt(len(seeds))) if len(seeds) > 1 else 0.0
        out.append({"iteration": it, "mae": mae, "rmse": rmse, "mae_se": se})
    return out


def run_suite(config: ExperimentConfig, out_dir=None) -> dict:
    """Run every (scene, seed) session and aggregate; optionally write reports."""
    scenes = suite_scenes(config.scenes)
    miscal = config.miscalibration()
    rows = []
    t0 = time.perf_counter()
    for seed in config.seeds:
        for scene_id, scene in enumerate(scenes):
            rows.extend(run_session(scene, miscal, config, seed, scene_id))
    report = {
        "config": json.loads(config.to_json()),
        "n_scenes": len(scenes),
        "iterations": aggregate_rows(rows, config.interactions),
        "wall_s": time.perf_counter() - t0,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_rows_csv(out / "results.csv", rows)
        (out / "report.json").write_text(json.dumps(report, indent=2))
    report["rows"] = rows
    return report


CSV_FIELDS = ["scene_id", "seed", "iteration", "pred_total", "gt_total", "seg_ms", "adapt_ms"]


def write_rows_csv(path, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: r[k] for k in CSV_FIELDS})


def read_rows_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            rows.append(
                {
                    "scene_id": int(r["scene_id"]),
                    "seed": int(r["seed"]),
                    "iteration": int(r["iteration"]),
                    "pred_total": float(r["pred_total"]),
                    "gt_total": float(r["gt_total"]),
                    "seg_ms": float(r["seg_ms"]),
                    "adapt_ms": float(r["adapt_ms"]),
                }
            )
    return rows
