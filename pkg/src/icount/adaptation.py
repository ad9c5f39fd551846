"""Range-constrained adaptation of the refinement parameters.

Feedback arrives as half-open count ranges over regions; the loss is a hinge
on each region's predicted sum plus one more hinge treating all fed-back
regions as a single pooled region, with a squared-norm pull toward the
identity refinement.  Feedback confidence (how many records, and whether they
agree on the error direction) rescales the learning rate and step count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .counter import RefinementParams, ToyCounter, backward, forward_cached


@dataclass(frozen=True)
class CountRange:
    """Half-open count interval (lower, upper]; bounds may be infinite."""

    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"empty range ({self.lower}, {self.upper}]")

    def contains(self, x: float) -> bool:
        return self.lower < x <= self.upper

    def to_json(self) -> list:
        return [
            None if math.isinf(self.lower) else self.lower,
            None if math.isinf(self.upper) else self.upper,
        ]

    @classmethod
    def from_json(cls, pair) -> "CountRange":
        lo = -math.inf if pair[0] is None else float(pair[0])
        hi = math.inf if pair[1] is None else float(pair[1])
        return cls(lo, hi)

    def label(self) -> str:
        if math.isinf(self.lower):
            return f"{self.upper:g}"
        if math.isinf(self.upper):
            return f">{self.lower:g}"
        return f"{self.lower:g}–{self.upper:g}"


@dataclass
class FeedbackRecord:
    pixels: np.ndarray  # flat indices into the full-resolution prediction
    count_range: CountRange
    iteration: int
    region_id: int = -1

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.int64)
        if self.pixels.size == 0:
            raise ValueError("feedback region must be non-empty")


@dataclass(frozen=True)
class AdaptConfig:
    lr: float = 0.02
    steps: int = 10
    reg_weight: float = 0.002
    info_threshold: int = 3
    temperature: float = 2.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    confidence_floor: float = 0.05

    def __post_init__(self):
        if self.lr <= 0 or self.steps < 1 or self.reg_weight < 0 or self.temperature <= 0:
            raise ValueError("invalid adaptation settings")


def region_sum(prediction: np.ndarray, record: FeedbackRecord) -> float:
    return float(prediction.ravel()[record.pixels].sum())


def loss_interactive(r_s: float, count_range: CountRange) -> float:
    """Hinge distance of a predicted sum from its count range (0 inside)."""
    return max(0.0, count_range.lower - r_s) + max(0.0, r_s - count_range.upper)


def loss_local(records, prediction) -> float:
    return sum(loss_interactive(region_sum(prediction, r), r.count_range) for r in records)


def loss_global(records, prediction) -> float:
    """Hinge on the pooled sum against the pooled range (extended-real sums)."""
    if not records:
        return 0.0
    total = sum(region_sum(prediction, r) for r in records)
    lo = sum(r.count_range.lower for r in records)
    hi = sum(r.count_range.upper for r in records)
    return max(0.0, lo - total) + max(0.0, total - hi)


def regularizer(params: RefinementParams, config: AdaptConfig) -> float:
    dev = (
        float(((params.ch_scale - 1.0) ** 2).sum())
        + float(((params.sp_scale - 1.0) ** 2).sum())
        + float((params.ch_bias**2).sum())
        + float((params.sp_bias**2).sum())
    )
    return config.reg_weight * dev


def loss_total(records, prediction, params: RefinementParams, config: AdaptConfig) -> float:
    return loss_local(records, prediction) + loss_global(records, prediction) + regularizer(params, config)


def classify_feedback(records, prediction) -> tuple[int, int]:
    """Count over-counting (sum above range) and under-counting (sum at or
    below the lower bound) records; in-range records belong to neither."""
    n_over = 0
    n_under = 0
    for r in records:
        s = region_sum(prediction, r)
        if s > r.count_range.upper:
            n_over += 1
        elif s <= r.count_range.lower:
            n_under += 1
    return n_over, n_under


def confidence_informativeness(records, config: AdaptConfig) -> float:
    if not records:
        raise ValueError("need at least one feedback record")
    return min(1.0, math.exp((len(records) - config.info_threshold) / config.temperature))


def confidence_consistency(records, prediction) -> float:
    n_over, n_under = classify_feedback(records, prediction)
    if n_over + n_under == 0:
        return 1.0
    p = n_over / (n_over + n_under)
    ent = 0.0
    if 0 < p:
        ent += p * math.log2(p)
    if p < 1:
        ent += (1 - p) * math.log2(1 - p)
    return 1.0 + ent


def confidence(records, prediction, config: AdaptConfig) -> float:
    f_i = confidence_informativeness(records, config)
    f_s = confidence_consistency(records, prediction)
    return max(config.confidence_floor, 0.5 * f_i + 0.5 * f_s)


def adapt_step_counts(config: AdaptConfig, feedback_value: float) -> tuple[float, int]:
    """Scale the learning rate down and the step count up for shaky feedback."""
    if not 0 < feedback_value <= 1:
        raise ValueError("feedback value must be in (0, 1]")
    return config.lr * feedback_value, math.ceil(config.steps / feedback_value)


class Adam:
    """Adam over a fixed list of parameter arrays; moments persist for the
    lifetime of the optimizer (one interaction session)."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    @classmethod
    def for_config(cls, config: AdaptConfig) -> "Adam":
        return cls(config.beta1, config.beta2, config.eps)

    def reset(self):
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def loss_gradient_wrt_density(records, prediction) -> tuple[np.ndarray, float]:
    """Hinge loss value and its gradient as a density-shaped map."""
    flat = prediction.ravel()
    grad = np.zeros_like(flat)
    loss = 0.0
    sums = []
    for r in records:
        s = float(flat[r.pixels].sum())
        sums.append(s)
        direction = 0.0
        if s > r.count_range.upper:
            direction += 1.0
            loss += s - r.count_range.upper
        if s < r.count_range.lower:
            direction -= 1.0
            loss += r.count_range.lower - s
        if direction:
            grad[r.pixels] += direction
    if records:
        total = sum(sums)
        lo = sum(r.count_range.lower for r in records)
        hi = sum(r.count_range.upper for r in records)
        direction = 0.0
        if total > hi:
            direction += 1.0
            loss += total - hi
        if total < lo:
            direction -= 1.0
            loss += lo - total
        if direction:
            for r in records:
                grad[r.pixels] += direction
    return grad.reshape(prediction.shape), loss


def adapt(
    counter: ToyCounter,
    params: RefinementParams,
    optimizer: Adam,
    records,
    config: AdaptConfig,
) -> tuple[RefinementParams, np.ndarray, list[float]]:
    """Run one confidence-scaled adaptation round over the feedback set.

    Region sums are recomputed from a fresh forward pass before every update;
    optimizer moments persist across rounds within a session.  Returns the
    updated parameters, the final prediction, and the per-step loss values.
    """
    if not records:
        raise ValueError("feedback set must be non-empty")
    current = counter.predict(params)
    f_c = confidence(records, current, config)
    lr, n_steps = adapt_step_counts(config, f_c)

    eta2 = 2.0 * config.reg_weight
    losses = []
    for _ in range(n_steps):
        prediction, cache = forward_cached(counter.features, params, counter.weights)
        grad_map, data_loss = loss_gradient_wrt_density(records, prediction)
        grads = backward(counter.features, params, counter.weights, grad_map, cache)
        g_list = [
            grads.ch_scale + eta2 * (params.ch_scale - 1.0),
            grads.ch_bias + eta2 * params.ch_bias,
            grads.sp_scale + eta2 * (params.sp_scale - 1.0),
            grads.sp_bias + eta2 * params.sp_bias,
        ]
        losses.append(data_loss + regularizer(params, config))
        optimizer.step(params.blocks(), g_list, lr)
    return params, counter.predict(params), losses


def feedback_to_json(records) -> str:
    rows = [
        {
            "region_id": int(r.region_id),
            "range": r.count_range.to_json(),
            "iteration": int(r.iteration),
        }
        for r in records
    ]
    return json.dumps(rows)


def feedback_ranges_from_json(text: str) -> list[dict]:
    rows = json.loads(text)
    return [
        {
            "region_id": int(row["region_id"]),
            "range": CountRange.from_json(row["range"]),
            "iteration": int(row["iteration"]),
        }
        for row in rows
    ]
