"""A small differentiable counting head with an affine refinement module.

The head is fixed (never trained): the input feature stack sits just after
the first convolution of a notional regression head, and the only adaptable
parameters are the refinement module's per-channel and per-cell scale/bias.
Forward/backward are written out by hand so gradients are exact and
reproducible bit-for-bit.

`synthesize_counter` builds feature stacks whose exact inverse mixing is known,
so the identity-calibrated prediction matches the rendered scene analytically;
miscalibration modes inject the global, per-channel, and localized errors the
refinement module is meant to correct.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .density import DotScene, SmoothKernel, render_density, smooth

N_CHANNELS = 6

# per-channel mixtures over the four base blurs; channel 0 is the carrier,
# channels 1-4 are cancelling texture pairs, channel 5 is low-gain.  The
# projection weights q are chosen so the signed mixture sums reduce to the
# sharpest blur exactly, while keeping sum(|q| * mix mass) small: adapted
# channel scales drift together under one-sided feedback, and that ledger
# bounds the collateral shift of the calibrated mass.
_BASE_SIGMAS = (0.6, 1.2, 2.0, 3.0)
_MIX = np.array(
    [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.6, 0.4, 0.0],
        [0.0, 0.48, 0.32, 0.0],
        [0.0, 0.0, 0.5, 0.5],
        [0.0, 0.0, 0.495, 0.405],
        [0.0, 0.0, 0.0, 0.02],
    ]
)
_Q = np.array([1.0, 0.2, -0.25, -0.22, 2.0 / 9.0, 1.0])


@dataclass
class RefinementParams:
    ch_scale: np.ndarray
    ch_bias: np.ndarray
    sp_scale: np.ndarray
    sp_bias: np.ndarray

    @classmethod
    def identity(cls, channels: int, height: int, width: int) -> "RefinementParams":
        return cls(
            ch_scale=np.ones(channels),
            ch_bias=np.zeros(channels),
            sp_scale=np.ones((height, width)),
            sp_bias=np.zeros((height, width)),
        )

    def copy(self) -> "RefinementParams":
        return RefinementParams(
            self.ch_scale.copy(), self.ch_bias.copy(), self.sp_scale.copy(), self.sp_bias.copy()
        )

    def blocks(self) -> list[np.ndarray]:
        return [self.ch_scale, self.ch_bias, self.sp_scale, self.sp_bias]


@dataclass(frozen=True)
class HeadWeights:
    conv0_kernel: np.ndarray  # (C, C, 3, 3), fixed layer ahead of the refinement point
    conv0_bias: np.ndarray
    conv1_kernel: np.ndarray  # (C, C, 3, 3)
    conv1_bias: np.ndarray
    proj_kernel: np.ndarray  # (C,)
    proj_bias: float
    upsample: int = 1

    def __post_init__(self):
        if self.upsample not in (1, 2, 4):
            raise ValueError("upsample factor must be 1, 2 or 4")


@dataclass(frozen=True)
class Miscalibration:
    kind: str = "none"
    alpha: float = 1.0
    alphas: tuple[float, ...] | None = None
    center: tuple[float, float] | None = None
    radius: float = 4.0
    magnitude: float = 0.0

    @classmethod
    def none(cls) -> "Miscalibration":
        return cls()

    @classmethod
    def global_scale(cls, alpha: float) -> "Miscalibration":
        if alpha <= 0:
            raise ValueError("scale must be positive")
        return cls(kind="global_scale", alpha=alpha)

    @classmethod
    def channel_scale(cls, alphas) -> "Miscalibration":
        alphas = tuple(float(a) for a in alphas)
        if any(a <= 0 for a in alphas):
            raise ValueError("scales must be positive")
        return cls(kind="channel_scale", alphas=alphas)

    @classmethod
    def local_blob(cls, center, radius: float, magnitude: float) -> "Miscalibration":
        return cls(kind="local_blob", center=(float(center[0]), float(center[1])), radius=float(radius), magnitude=float(magnitude))


def refine(features: np.ndarray, params: RefinementParams) -> np.ndarray:
    """Channel-wise then spatial-wise affine refinement of a feature stack."""
    if features.shape[0] != params.ch_scale.shape[0] or features.shape[1:] != params.sp_scale.shape:
        raise ValueError(
            f"feature shape {features.shape} does not match parameter shapes "
            f"{params.ch_scale.shape} / {params.sp_scale.shape}"
        )
    inner = params.ch_scale[:, None, None] * features + params.ch_bias[:, None, None]
    return params.sp_scale[None] * inner + params.sp_bias[None]


def conv3x3(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """3x3 convolution with zero padding; x is (C, H, W), kernel (O, C, 3, 3)."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = _kernels.conv3x3_padded(xp, np.ascontiguousarray(kernel))
    return out + bias[:, None, None]


def conv3x3_input_grad(d_out: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Adjoint of conv3x3 with respect to its input."""
    kt = np.ascontiguousarray(kernel[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv3x3(d_out, kt, np.zeros(kt.shape[0]))


_LIN_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _lin_matrix(n_in: int, n_out: int) -> np.ndarray:
    key = (n_in, n_out)
    if key not in _LIN_CACHE:
        if n_out == n_in:
            m = np.eye(n_in)
        else:
            if n_in < 2:
                raise ValueError("need at least 2 samples to upsample")
            pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
            lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
            frac = pos - lo
            m = np.zeros((n_out, n_in))
            m[np.arange(n_out), lo] = 1 - frac
            m[np.arange(n_out), lo + 1] = frac
        _LIN_CACHE[key] = m
    return _LIN_CACHE[key]


def bilinear_up(x: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return x
    mr = _lin_matrix(x.shape[1], x.shape[1] * factor)
    mc = _lin_matrix(x.shape[2], x.shape[2] * factor)
    return np.einsum("bw,ah,chw->cab", mc, mr, x, optimize=True)


def bilinear_up_transpose(d_out: np.ndarray, in_h: int, in_w: int, factor: int) -> np.ndarray:
    if factor == 1:
        return d_out
    mr = _lin_matrix(in_h, in_h * factor)
    mc = _lin_matrix(in_w, in_w * factor)
    return np.einsum("bw,ah,cab->chw", mc, mr, d_out, optimize=True)


def forward_cached(features, params: RefinementParams, weights: HeadWeights):
    x0 = refine(features, params)
    x1 = np.maximum(x0, 0.0)
    x2 = conv3x3(x1, weights.conv1_kernel, weights.conv1_bias)
    x3 = np.maximum(x2, 0.0)
    x4 = bilinear_up(x3, weights.upsample)
    x5 = np.einsum("c,chw->hw", weights.proj_kernel, x4) + weights.proj_bias
    density = np.maximum(x5, 0.0)
    cache = (x0 > 0.0, x2 > 0.0, x5 > 0.0)
    return density, cache


def forward(features, params: RefinementParams, weights: HeadWeights) -> np.ndarray:
    """Predicted density: refine -> ReLU -> conv -> ReLU -> upsample -> project -> ReLU."""
    return forward_cached(features, params, weights)[0]


def backward(features, params: RefinementParams, weights: HeadWeights, d_density, cache=None) -> RefinementParams:
    """Exact gradients of sum(d_density * D) with respect to the refinement
    parameters only; head weights and features receive no gradient."""
    if cache is None:
        _, cache = forward_cached(features, params, weights)
    gate0, gate2, gate5 = cache
    g5 = np.asarray(d_density, dtype=np.float64) * gate5
    g4 = weights.proj_kernel[:, None, None] * g5[None]
    g3 = bilinear_up_transpose(g4, features.shape[1], features.shape[2], weights.upsample)
    g2 = g3 * gate2
    g1 = conv3x3_input_grad(g2, weights.conv1_kernel)
    g0 = g1 * gate0

    inner = params.ch_scale[:, None, None] * features + params.ch_bias[:, None, None]
    return RefinementParams(
        ch_scale=(g0 * params.sp_scale[None] * features).sum(axis=(1, 2)),
        ch_bias=(g0 * params.sp_scale[None]).sum(axis=(1, 2)),
        sp_scale=(g0 * inner).sum(axis=0),
        sp_bias=g0.sum(axis=0),
    )


@dataclass
class ToyCounter:
    features: np.ndarray
    weights: HeadWeights
    ground_truth: np.ndarray | None = None

    def predict(self, params: RefinementParams) -> np.ndarray:
        return forward(self.features, params, self.weights)

    def identity_params(self) -> RefinementParams:
        return RefinementParams.identity(*self.features.shape)


def _identity_conv_kernel(channels: int) -> np.ndarray:
    k = np.zeros((channels, channels, 3, 3))
    for c in range(channels):
        k[c, c, 1, 1] = 1.0
    return k


def _smoothing_conv_kernel(channels: int) -> np.ndarray:
    k1 = np.array([0.25, 0.5, 0.25])
    k2 = np.outer(k1, k1)
    k = np.zeros((channels, channels, 3, 3))
    for c in range(channels):
        k[c, c] = k2
    return k


def _blob_field(height: int, width: int, center, radius: float) -> np.ndarray:
    """Unit-mass softened disk.  A flat profile keeps peak close to mean, so a
    suppression feedback extinguishes the whole blob in a few steps instead of
    chiselling at a sharp peak."""
    cx, cy = center
    rows = np.arange(height, dtype=np.float64)
    cols = np.arange(width, dtype=np.float64)
    d2 = (rows[:, None] - cy) ** 2 + (cols[None, :] - cx) ** 2
    field = (d2 <= radius * radius).astype(np.float64)
    field = smooth(field, SmoothKernel.for_sigma(1.0))
    return field / field.sum()


def synthesize_counter(scene: DotScene, miscal: Miscalibration, seed: int = 0) -> tuple[np.ndarray, HeadWeights, np.ndarray]:
    """Construct (features, weights, ground truth) for a dot scene."""
    return synthesize_counter_from_grid(render_density(scene), miscal, seed)


def synthesize_counter_from_grid(gt, miscal: Miscalibration, seed: int = 0) -> tuple[np.ndarray, HeadWeights, np.ndarray]:
    """Construct (features, weights, ground truth) for a known density grid.

    The feature channels are fixed mixtures of progressively blurred copies of
    the true density, with staggered channel gains; the projection weights are
    the exact inverse of that mixing, so the identity-refined prediction equals
    a lightly smoothed copy of the ground truth.  Channel gains are large for
    the mass-carrying channels, which keeps the prediction insensitive to small
    additive drifts in the adapted biases; channel 5 runs at unit gain and is
    where localized spurious activations are injected.
    """
    rng = np.random.default_rng(seed)
    gt = np.asarray(gt, dtype=np.float64)

    bases = np.stack([smooth(gt, SmoothKernel.for_sigma(s)) for s in _BASE_SIGMAS])
    kappa = np.array(
        [
            rng.uniform(40, 60),
            rng.uniform(90, 130),
            rng.uniform(45, 70),
            rng.uniform(80, 110),
            rng.uniform(40, 60),
            1.0,
        ]
    )
    features = np.einsum("ck,khw->chw", _MIX, bases) * kappa[:, None, None]

    if miscal.kind == "global_scale":
        features = features * miscal.alpha
    elif miscal.kind == "channel_scale":
        if miscal.alphas is None or len(miscal.alphas) != N_CHANNELS:
            raise ValueError(f"channel_scale needs {N_CHANNELS} factors")
        features = features * np.asarray(miscal.alphas)[:, None, None]
    elif miscal.kind == "local_blob":
        if miscal.center is None:
            raise ValueError("local_blob needs a center")
        bump = _blob_field(gt.shape[0], gt.shape[1], miscal.center, miscal.radius)
        features[5] += kappa[5] * (miscal.magnitude / _Q[5]) * bump
    elif miscal.kind != "none":
        raise ValueError(f"unknown miscalibration kind {miscal.kind!r}")

    weights = HeadWeights(
        conv0_kernel=_identity_conv_kernel(N_CHANNELS),
        conv0_bias=np.zeros(N_CHANNELS),
        conv1_kernel=_smoothing_conv_kernel(N_CHANNELS),
        conv1_bias=np.zeros(N_CHANNELS),
        proj_kernel=_Q / kappa,
        proj_bias=0.0,
        upsample=1,
    )
    return features, weights, gt
