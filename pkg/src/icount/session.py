"""The interaction loop: predict, segment, collect feedback, adapt, repeat.

One CountingSession owns a counter, the refinement parameters, the optimizer
moments, and the accumulated feedback set; the bench harness and the HTTP
service both drive sessions through this class.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adaptation import Adam, AdaptConfig, CountRange, FeedbackRecord, adapt
from .counter import HeadWeights, ToyCounter
from .density import downsample_sum, upsample_labels
from .feedback import RangeFamily
from .gridio import load_dgrid, load_fmap, rle_decode_rows, rle_encode_rows, save_dgrid, save_fmap
from .segmentation import (
    Segmentation,
    SegmentationConfig,
    segment,
    segmentation_from_labels,
    working_config_for,
)


class StaleRegionError(ValueError):
    """Feedback referenced a region from an outdated segmentation."""


@dataclass
class InteractionResult:
    record: FeedbackRecord
    segment_ms: float
    adapt_ms: float
    losses: list[float]


class CountingSession:
    def __init__(
        self,
        counter: ToyCounter,
        seg_config: SegmentationConfig | None = None,
        adapt_config: AdaptConfig | None = None,
        range_family: RangeFamily | None = None,
        seed: int = 0,
        auto_scale_bounds: bool = True,
        reset_per_interaction: bool = False,
    ):
        self.counter = counter
        self.seg_config = seg_config or SegmentationConfig()
        self.adapt_config = adapt_config or AdaptConfig()
        self.range_family = range_family or RangeFamily()
        self.seed = seed
        self.auto_scale_bounds = auto_scale_bounds
        self.reset_per_interaction = reset_per_interaction

        self.params = counter.identity_params()
        self.optimizer = Adam.for_config(self.adapt_config)
        self.records: list[FeedbackRecord] = []
        self.iteration = 0
        self.generation = 0
        self.selected_ids: set[int] = set()
        self.last_losses: list[float] = []
        self.segment_ms = 0.0
        self.adapt_ms = 0.0

        self.prediction: np.ndarray = counter.predict(self.params)
        self.working_segmentation: Segmentation
        self.full_segmentation: Segmentation
        self._resegment()
        self.history: list[float] = [self.predicted_total]

    @property
    def ground_truth(self) -> np.ndarray | None:
        return self.counter.ground_truth

    @property
    def predicted_total(self) -> float:
        return float(self.prediction.sum())

    def _resegment(self) -> None:
        t0 = time.perf_counter()
        factor = self.seg_config.downsample_factor
        working = downsample_sum(self.prediction, factor)
        cfg = self.seg_config
        if self.auto_scale_bounds:
            cfg = working_config_for(working.shape, cfg)
        self.working_segmentation = segment(working, cfg, seed=self.seed + self.generation)
        h, w = self.prediction.shape
        labels_full = upsample_labels(self.working_segmentation.labels, factor, h, w)
        kinds = [r.kind for r in sorted(self.working_segmentation.regions, key=lambda r: r.id)]
        self.full_segmentation = segmentation_from_labels(labels_full, self.prediction, kinds)
        self.selected_ids = set()
        self.segment_ms = (time.perf_counter() - t0) * 1000.0

    def region_pixels_flat(self, region_id: int) -> np.ndarray:
        return np.flatnonzero(self.full_segmentation.labels.ravel() == region_id)

    def submit(self, region_id: int, count_range: CountRange) -> InteractionResult:
        n_regions = self.full_segmentation.n_regions
        if not 0 <= region_id < n_regions:
            raise StaleRegionError(
                f"region {region_id} not in current segmentation ({n_regions} regions)"
            )
        record = FeedbackRecord(
            pixels=self.region_pixels_flat(region_id),
            count_range=count_range,
            iteration=self.iteration,
            region_id=region_id,
        )
        self.records.append(record)
        self.selected_ids.add(region_id)

        if self.reset_per_interaction:
            self.params = self.counter.identity_params()
            self.optimizer.reset()

        t0 = time.perf_counter()
        self.params, self.prediction, self.last_losses = adapt(
            self.counter, self.params, self.optimizer, self.records, self.adapt_config
        )
        self.adapt_ms = (time.perf_counter() - t0) * 1000.0

        self.iteration += 1
        self.generation += 1
        self._resegment()
        self.history.append(self.predicted_total)
        return InteractionResult(
            record=record,
            segment_ms=self.segment_ms,
            adapt_ms=self.adapt_ms,
            losses=list(self.last_losses),
        )

    # -- snapshot / restore -------------------------------------------------

    def _record_mask(self, record: FeedbackRecord) -> np.ndarray:
        mask = np.zeros(self.prediction.size, dtype=np.int32)
        mask[record.pixels] = 1
        return mask.reshape(self.prediction.shape)

    def save(self, directory) -> None:
        """Write the session state as JSON metadata plus grid blobs.

        Grid blobs are float32 on disk, so a restored session matches the
        original to single precision, not bit-for-bit."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_fmap(d / "features.fm", self.counter.features)
        if self.counter.ground_truth is not None:
            save_dgrid(d / "ground_truth.dgrid", self.counter.ground_truth)
        save_dgrid(d / "sp_scale.dgrid", self.params.sp_scale)
        save_dgrid(d / "sp_bias.dgrid", self.params.sp_bias)
        opt = self.optimizer
        if opt.m is not None:
            save_dgrid(d / "m_sp_scale.dgrid", opt.m[2])
            save_dgrid(d / "m_sp_bias.dgrid", opt.m[3])
            save_dgrid(d / "v_sp_scale.dgrid", opt.v[2])
            save_dgrid(d / "v_sp_bias.dgrid", opt.v[3])
        w = self.counter.weights
        meta = {
            "seed": self.seed,
            "iteration": self.iteration,
            "generation": self.generation,
            "auto_scale_bounds": self.auto_scale_bounds,
            "reset_per_interaction": self.reset_per_interaction,
            "seg_config": {
                "count_limit": self.seg_config.count_limit,
                "area_lower": self.seg_config.area_lower,
                "area_upper": self.seg_config.area_upper,
                "zero_fraction_max": self.seg_config.zero_fraction_max,
                "merge_threshold": self.seg_config.merge_threshold,
                "smooth_sigma": self.seg_config.smooth_sigma,
                "downsample_factor": self.seg_config.downsample_factor,
            },
            "adapt_config": {
                "lr": self.adapt_config.lr,
                "steps": self.adapt_config.steps,
                "reg_weight": self.adapt_config.reg_weight,
                "info_threshold": self.adapt_config.info_threshold,
                "temperature": self.adapt_config.temperature,
            },
            "range_family": {
                "count_limit": self.range_family.count_limit,
                "interval": self.range_family.interval,
            },
            "params": {
                "ch_scale": self.params.ch_scale.tolist(),
                "ch_bias": self.params.ch_bias.tolist(),
            },
            "optimizer": {
                "t": opt.t,
                "m_ch": None if opt.m is None else [opt.m[0].tolist(), opt.m[1].tolist()],
                "v_ch": None if opt.v is None else [opt.v[0].tolist(), opt.v[1].tolist()],
            },
            "weights": {
                "conv0_kernel": w.conv0_kernel.tolist(),
                "conv0_bias": w.conv0_bias.tolist(),
                "conv1_kernel": w.conv1_kernel.tolist(),
                "conv1_bias": w.conv1_bias.tolist(),
                "proj_kernel": w.proj_kernel.tolist(),
                "proj_bias": w.proj_bias,
                "upsample": w.upsample,
            },
            "feedback": [
                {
                    "region_id": int(r.region_id),
                    "range": r.count_range.to_json(),
                    "iteration": int(r.iteration),
                    "mask_rle": rle_encode_rows(self._record_mask(r)),
                }
                for r in self.records
            ],
        }
        (d / "session.json").write_text(json.dumps(meta))

    @classmethod
    def load(cls, directory) -> "CountingSession":
        d = Path(directory)
        meta = json.loads((d / "session.json").read_text())
        features = load_fmap(d / "features.fm")
        gt_path = d / "ground_truth.dgrid"
        gt = load_dgrid(gt_path) if gt_path.exists() else None
        w = meta["weights"]
        weights = HeadWeights(
            conv0_kernel=np.asarray(w["conv0_kernel"]),
            conv0_bias=np.asarray(w["conv0_bias"]),
            conv1_kernel=np.asarray(w["conv1_kernel"]),
            conv1_bias=np.asarray(w["conv1_bias"]),
            proj_kernel=np.asarray(w["proj_kernel"]),
            proj_bias=float(w["proj_bias"]),
            upsample=int(w["upsample"]),
        )
        counter = ToyCounter(features=features, weights=weights, ground_truth=gt)
        session = cls(
            counter,
            seg_config=SegmentationConfig(**meta["seg_config"]),
            adapt_config=AdaptConfig(**meta["adapt_config"]),
            range_family=RangeFamily(**meta["range_family"]),
            seed=meta["seed"],
            auto_scale_bounds=meta["auto_scale_bounds"],
            reset_per_interaction=meta["reset_per_interaction"],
        )
        session.params.ch_scale[:] = meta["params"]["ch_scale"]
        session.params.ch_bias[:] = meta["params"]["ch_bias"]
        session.params.sp_scale = load_dgrid(d / "sp_scale.dgrid")
        session.params.sp_bias = load_dgrid(d / "sp_bias.dgrid")
        opt_meta = meta["optimizer"]
        session.optimizer.t = opt_meta["t"]
        if opt_meta["m_ch"] is not None:
            session.optimizer.m = [
                np.asarray(opt_meta["m_ch"][0]),
                np.asarray(opt_meta["m_ch"][1]),
                load_dgrid(d / "m_sp_scale.dgrid"),
                load_dgrid(d / "m_sp_bias.dgrid"),
            ]
            session.optimizer.v = [
                np.asarray(opt_meta["v_ch"][0]),
                np.asarray(opt_meta["v_ch"][1]),
                load_dgrid(d / "v_sp_scale.dgrid"),
                load_dgrid(d / "v_sp_bias.dgrid"),
            ]
        shape = session.prediction.shape
        for row in meta["feedback"]:
            mask = rle_decode_rows(row["mask_rle"], shape[1])
            session.records.append(
                FeedbackRecord(
                    pixels=np.flatnonzero(mask.ravel()),
                    count_range=CountRange.from_json(row["range"]),
                    iteration=row["iteration"],
                    region_id=row["region_id"],
                )
            )
        session.iteration = meta["iteration"]
        session.generation = meta["generation"]
        session.prediction = counter.predict(session.params)
        session._resegment()
        return session
