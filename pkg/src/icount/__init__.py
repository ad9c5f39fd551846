"""Interactive density-map counting: segmentation, feedback, and adaptation."""

from .adaptation import AdaptConfig, CountRange, FeedbackRecord
from .counter import Miscalibration, RefinementParams, ToyCounter, synthesize_counter
from .density import (
    DotScene,
    SmoothKernel,
    downsample_sum,
    place_dots,
    render_density,
    smooth,
    upsample_labels,
)
from .feedback import RangeFamily, SimStrategy, bin_count
from .segmentation import (
    Region,
    Segmentation,
    SegmentationConfig,
    expand_peak,
    merge_small,
    objective_h,
    segment,
    split_background,
)
from .session import CountingSession

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig",
    "CountRange",
    "CountingSession",
    "DotScene",
    "FeedbackRecord",
    "Miscalibration",
    "RangeFamily",
    "RefinementParams",
    "Region",
    "Segmentation",
    "SegmentationConfig",
    "SimStrategy",
    "SmoothKernel",
    "ToyCounter",
    "bin_count",
    "downsample_sum",
    "expand_peak",
    "merge_small",
    "objective_h",
    "place_dots",
    "render_density",
    "segment",
    "smooth",
    "split_background",
    "synthesize_counter",
    "upsample_labels",
]
