"""Pyramid pooling with a dynamic middle scale.

Three parallel branches: dilated convolutions at a small and a large fixed
factor bracket a shared-offset dynamic branch whose dilation floats above
``delta_base`` by a half-Gaussian draw. Branch outputs are concatenated over
channels and fused by a 1x1 conv. All branches run in separable mode by
default to keep the parameter count down.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .gdc import GdcConfig, OffsetSample, gdc_depthwise, gdc_forward, sample_offsets
from .tensor import Tensor


@dataclass
class GdppConfig:
    small_dilation: int = 1
    large_dilation: int = 18
    delta_base: float = 9.0
    sigma: float = 2.0
    in_channels: int = 8
    branch_channels: int = 8
    out_channels: int = 8
    separable: bool = True

    def __post_init__(self):
        if not (self.small_dilation <= self.delta_base <= self.large_dilation):
            raise ValueError("need small_dilation <= delta_base <= large_dilation")
        if min(self.small_dilation, self.in_channels, self.branch_channels, self.out_channels) < 1:
            raise ValueError("channel counts and dilations must be >= 1")

    def gdc(self) -> GdcConfig:
        return GdcConfig(sigma=self.sigma, mode="shared", delta_base=self.delta_base,
                         sharing="per_forward")


class GdppParams:
    def __init__(self, config: GdppConfig, rng: np.random.Generator, dtype: str = "f32"):
        self.config = config
        cin, cb, cout = config.in_channels, config.branch_channels, config.out_channels
        dt = T.as_dtype(dtype)

        def he(shape):
            fan_in = int(np.prod(shape[1:]))
            return T.parameter((rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dt),
                               dtype=dtype)

        self.branches = {}
        for name in ("small", "mid", "large"):
            if config.separable:
                self.branches[name] = {"dw": he((cin, 1, 3, 3)), "pw": he((cb, cin, 1, 1))}
            else:
                self.branches[name] = {"full": he((cb, cin, 3, 3))}
        self.fuse = he((cout, 3 * cb, 1, 1))

    def all_params(self) -> list[Tensor]:
        out = []
        for branch in self.branches.values():
            out.extend(branch.values())
        out.append(self.fuse)
        return out

    def count(self) -> int:
        return sum(p.data.size for p in self.all_params())


def _fixed_branch(x: Tensor, params: dict, dilation: int, separable: bool) -> Tensor:
    if separable:
        return T.separable_conv(x, params["dw"], params["pw"], dilation=dilation)
    return T.conv2d(x, params["full"], pad=dilation, dilation=dilation)


def _dynamic_branch(x: Tensor, params: dict, sample: OffsetSample, separable: bool) -> Tensor:
    if separable:
        return T.pointwise_conv(gdc_depthwise(x, params["dw"], sample), params["pw"])
    return gdc_forward(x, params["full"], sample)


def gdpp_forward(x: Tensor, params: GdppParams, rng: np.random.Generator,
                 sample: OffsetSample | None = None) -> Tensor:
    """One pass; the middle branch draws a single shared offset unless given one."""
    cfg = params.config
    if sample is None:
        sample = sample_offsets(rng, cfg.gdc())
    small = _fixed_branch(x, params.branches["small"], cfg.small_dilation, cfg.separable)
    mid = _dynamic_branch(x, params.branches["mid"], sample, cfg.separable)
    large = _fixed_branch(x, params.branches["large"], cfg.large_dilation, cfg.separable)
    cat = T.concat_channels(T.concat_channels(small, mid), large)
    return T.pointwise_conv(cat, params.fuse)
