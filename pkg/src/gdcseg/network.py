"""Lightweight per-image segmentation net around the dynamic-offset kernel.

Architecture: a frozen two-stage feature stem (16 and 24 channels), both
groups resized to half the input size and fused by a 1x1 conv; a two-branch
block (plain 3x3 conv for local structure + dynamic-offset conv for context)
summed elementwise; a pixel classifier (3x3 conv, ReLU, 1x1 conv), bilinear
upsample to full resolution and channel softmax.

The net is (re)initialized and optimized per image: a handful of SGD steps
against the weighted cross-entropy on scribble-expanded labels, drawing a
fresh offset sample every step; inference averages the probability maps of
many offset samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .gdc import GdcConfig, OffsetSample, draw_offsets, gdc_forward
from .scribbles import LabelMask, class_weights
from .tensor import Tensor, read_weight_file

STEM_CHANNELS = (16, 24)
FUSE_CHANNELS = 24
CLS_CHANNELS = 24

STEM_PARAM_SHAPES = {
    "stem.conv1": (16, 3, 3, 3),
    "stem.dw": (16, 1, 3, 3),
    "stem.pw": (24, 16, 1, 1),
}


def default_gdc_config() -> GdcConfig:
    return GdcConfig(sigma=0.2, mode="per_direction", adaptive_scale=True)


@dataclass
class NetConfig:
    num_categories: int
    steps: int = 50
    lr: float = 0.01
    gdc: GdcConfig = field(default_factory=default_gdc_config)
    inference_samples: int = 50
    stem_seed: int = 0
    stem_weights: str | None = None
    dtype: str = "f32"
    loss_reduction: str = "mean"
    average_mode: str = "probs"  # or "votes"

    def __post_init__(self):
        if self.steps < 1 or self.inference_samples < 1:
            raise ValueError("steps and inference_samples must be >= 1")
        if self.num_categories < 2:
            raise ValueError("need at least two categories")
        if self.average_mode not in ("probs", "votes"):
            raise ValueError(f"unknown average_mode {self.average_mode!r}")


@dataclass
class SegmentationResult:
    probs: np.ndarray                 # (N,H,W), per-pixel simplex
    mask: np.ndarray                  # (H,W) int32 argmax
    samples: list                     # OffsetSample records used at inference
    per_sample_masks: list | None = None
    metrics: dict | None = None


class OffsetSampler:
    """Seed-addressed half-Gaussian offset draws for one image."""

    def __init__(self, config: GdcConfig, image_short_side: int):
        self.config = config
        self.short_side = image_short_side

    @property
    def stochastic(self) -> bool:
        return self.config.sigma > 0

    def draw(self, seed: int) -> OffsetSample:
        return draw_offsets(seed, self.config, self.short_side)


def _he_conv(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class SegNet:
    def __init__(self, config: NetConfig, init_rng: np.random.Generator):
        self.config = config
        dt = T.as_dtype(config.dtype)
        stem_rng = np.random.default_rng(config.stem_seed)
        stem = {name: _he_conv(stem_rng, shape, dt)
                for name, shape in STEM_PARAM_SHAPES.items()}
        if config.stem_weights is not None:
            loaded = read_weight_file(config.stem_weights)
            for name, shape in STEM_PARAM_SHAPES.items():
                if name not in loaded:
                    raise ValueError(f"weight file missing parameter {name!r}")
                if loaded[name].shape != shape:
                    raise ValueError(
                        f"weight {name!r} has shape {loaded[name].shape}, expected {shape}")
                stem[name] = loaded[name].astype(dt)
        self.stem = {k: Tensor(v, requires_grad=False, name=k) for k, v in stem.items()}

        n = config.num_categories
        f, c = FUSE_CHANNELS, CLS_CHANNELS
        p = {
            "fuse.w": _he_conv(init_rng, (f, sum(STEM_CHANNELS), 1, 1), dt),
            "fuse.b": np.zeros(f, dtype=dt),
            "local.w": _he_conv(init_rng, (f, f, 3, 3), dt),
            "dyn.w": _he_conv(init_rng, (f, f, 3, 3), dt),
            "cls1.w": _he_conv(init_rng, (c, f, 3, 3), dt),
            "cls1.b": np.zeros(c, dtype=dt),
            "cls2.w": _he_conv(init_rng, (n, c, 1, 1), dt),
            "cls2.b": np.zeros(n, dtype=dt),
        }
        self.params = {k: T.parameter(v, dtype=config.dtype, name=k) for k, v in p.items()}

    def trainable(self) -> list[Tensor]:
        return list(self.params.values())

    def stem_state(self) -> dict:
        return {k: v.data.copy() for k, v in self.stem.items()}

    def extract_features(self, image: np.ndarray) -> Tensor:
        """Frozen stem + resize + concat; constant across steps for one image."""
        x = Tensor(image, dtype=self.config.dtype)
        a = T.relu(T.conv2d(x, self.stem["stem.conv1"], stride=2, pad=1))
        b = T.relu(T.pointwise_conv(
            T.depthwise_conv2d(a, self.stem["stem.dw"], stride=2, pad=1),
            self.stem["stem.pw"]))
        th, tw = a.shape[1], a.shape[2]  # half of the input size
        a = T.bilinear_resize(a, th, tw)
        b = T.bilinear_resize(b, th, tw)
        cat = T.concat_channels(a, b)
        return cat.detached()

    def head(self, features: Tensor, sample: OffsetSample, out_size) -> Tensor:
        """Trainable tail: fuse, two-branch block, classifier, upsample, softmax."""
        fused = T.bias_add(T.pointwise_conv(features, self.params["fuse.w"]),
                           self.params["fuse.b"])
        local = T.conv2d(fused, self.params["local.w"], pad=1)
        dyn = gdc_forward(fused, self.params["dyn.w"], sample)
        merged = T.add(local, dyn)
        h = T.relu(T.bias_add(T.conv2d(merged, self.params["cls1.w"], pad=1),
                              self.params["cls1.b"]))
        logits = T.bias_add(T.pointwise_conv(h, self.params["cls2.w"]),
                            self.params["cls2.b"])
        logits = T.bilinear_resize(logits, out_size[0], out_size[1])
        return T.softmax_channels(logits)

    def gdc_branch(self, features: Tensor, sample: OffsetSample) -> Tensor:
        """Just the dynamic branch output, for feature-diversity probes."""
        fused = T.bias_add(T.pointwise_conv(features, self.params["fuse.w"]),
                           self.params["fuse.b"])
        return gdc_forward(fused, self.params["dyn.w"], sample)

    def forward(self, image: np.ndarray, sample: OffsetSample) -> Tensor:
        """Full pass on a (3,H,W) image in [0,1]; returns (N,H,W) probabilities."""
        return self.head(self.extract_features(image), sample, image.shape[1:])


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected (3,H,W) image, got {image.shape}")
    if image.min() < 0 or image.max() > 1:
        raise ValueError("image must be normalized to [0,1]")
    return image


def optimize_single_image(image: np.ndarray, mask: LabelMask, config: NetConfig,
                          rng: np.random.Generator, sampler: OffsetSampler | None = None,
                          progress=None) -> tuple[SegNet, list[float]]:
    """Initialize a net for this image and run the SGD loop on the scribble mask.

    Every step draws a fresh offset sample (the stochastic receptive field is
    the regularizer here). Returns the trained net and the loss trace.
    """
    image = _check_image(image)
    if mask.labeled_count() == 0:
        raise ValueError("label mask is entirely unlabeled")
    if int(mask.labels.max()) >= config.num_categories:
        raise ValueError("mask contains a category id outside the configured range")
    net = SegNet(config, rng)
    if sampler is None:
        sampler = OffsetSampler(config.gdc, min(image.shape[1:]))
    weights = class_weights(mask, num_categories=config.num_categories)
    features = net.extract_features(image)
    params = net.trainable()
    trace: list[float] = []
    for step in range(config.steps):
        sample = sampler.draw(int(rng.integers(0, 2 ** 63 - 1)))
        probs = net.head(features, sample, image.shape[1:])
        loss = T.weighted_ce_loss(probs, mask.labels, weights,
                                  reduction=config.loss_reduction)
        T.backward(loss)
        T.sgd_step(params, [p.grad for p in params], config.lr)
        T.zero_grad(params)
        trace.append(loss.item())
        if progress is not None:
            progress(step + 1, config.steps, trace[-1])
    return net, trace


def infer_averaged(net: SegNet, image: np.ndarray, config: NetConfig,
                   rng: np.random.Generator, sampler: OffsetSampler | None = None,
                   keep_sample_masks: bool = False) -> SegmentationResult:
    """Average the probability maps of many offset draws, then argmax.

    With a deterministic sampler one forward stands in for all draws (the
    average of identical maps is the map itself). ``average_mode='votes'``
    majority-votes the per-sample argmax masks instead.
    """
    image = _check_image(image)
    if sampler is None:
        sampler = OffsetSampler(config.gdc, min(image.shape[1:]))
    features = net.extract_features(image)
    n_samples = config.inference_samples if sampler.stochastic else 1
    acc = None
    votes = None
    samples = []
    per_masks: list[np.ndarray] | None = [] if keep_sample_masks else None
    for _ in range(n_samples):
        sample = sampler.draw(int(rng.integers(0, 2 ** 63 - 1)))
        samples.append(sample)
        probs = net.head(features, sample, image.shape[1:]).data.astype(np.float64)
        if config.average_mode == "votes":
            m = probs.argmax(axis=0)
            if votes is None:
                votes = np.zeros((config.num_categories,) + m.shape, dtype=np.int64)
            for cat in range(config.num_categories):
                votes[cat] += m == cat
        else:
            acc = probs if acc is None else acc + probs
        if per_masks is not None:
            per_masks.append(probs.argmax(axis=0).astype(np.int32))
    if config.average_mode == "votes":
        mean = votes.astype(np.float64) / n_samples
    else:
        mean = acc / n_samples
    mask = mean.argmax(axis=0).astype(np.int32)
    return SegmentationResult(probs=mean, mask=mask, samples=samples,
                              per_sample_masks=per_masks)


def segment_image(image: np.ndarray, scribble_mask: LabelMask, config: NetConfig,
                  seed: int, sampler: OffsetSampler | None = None,
                  progress=None) -> tuple[SegmentationResult, list[float]]:
    """Train-then-infer convenience used by both the CLI and the HTTP service."""
    rng = np.random.default_rng(seed)
    net, trace = optimize_single_image(image, scribble_mask, config, rng,
                                       sampler=sampler, progress=progress)
    result = infer_averaged(net, image, config, rng, sampler=sampler)
    return result, trace
