"""Dynamic-offset convolution kernels and scribble-seeded single-image segmentation."""

from .gdc import (
    DIRECTION_BASIS,
    GdcConfig,
    OffsetSample,
    draw_offsets,
    gdc_depthwise,
    gdc_forward,
    half_gaussian_sample,
    sample_offsets,
    taps_for_position,
)
from .metrics import EvalReport, miou
from .network import (
    NetConfig,
    OffsetSampler,
    SegmentationResult,
    SegNet,
    infer_averaged,
    optimize_single_image,
    segment_image,
)
from .scribbles import LabelMask, ScribbleSet, Stroke, class_weights, expand_scribbles
from .slic import SuperpixelMap, slic
from .tensor import NonFiniteError, Tensor, backward, sgd_step

__all__ = [
    "DIRECTION_BASIS", "GdcConfig", "OffsetSample", "draw_offsets", "gdc_depthwise",
    "gdc_forward", "half_gaussian_sample", "sample_offsets", "taps_for_position",
    "EvalReport", "miou", "NetConfig", "OffsetSampler", "SegmentationResult", "SegNet",
    "infer_averaged", "optimize_single_image", "segment_image", "LabelMask",
    "ScribbleSet", "Stroke", "class_weights", "expand_scribbles", "SuperpixelMap",
    "slic", "NonFiniteError", "Tensor", "backward", "sgd_step",
]
