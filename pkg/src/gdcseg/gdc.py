"""Dynamic-offset convolution with half-Gaussian tap displacement.

A 3x3 kernel keeps its center tap fixed while the other taps move outward
along fixed direction bases by non-negative random offsets. Two modes:

* ``per_direction``: each non-center direction draws its own 2-D offset;
  the offset is multiplied by ``scale`` (the image short side when the
  adaptive option is on) before displacing the tap.
* ``shared``: one 2-D offset for all directions, added to a constant
  ``delta_base``; with the offset at zero this is exactly a dilated
  convolution with factor ``delta_base``.

Fractional displacements are rounded half-away-from-zero to integer taps,
and taps are clamped to the image bounds (replicate behaviour at borders).
Offsets are never trained; gradients flow through weights and features only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _make, _same_dtype, accumulate_grad

MODES = ("per_direction", "shared")
SHARINGS = ("per_forward", "per_position")


def direction_basis(kernel_size: int = 3) -> np.ndarray:
    """The fixed (k*k, 2) grid of sign vectors, row-major; center at index k*k//2."""
    if kernel_size < 3 or kernel_size % 2 != 1:
        raise ValueError(f"kernel size must be odd and >= 3, got {kernel_size}")
    r = kernel_size // 2
    steps = np.arange(-r, r + 1)
    return np.array([[dy, dx] for dy in steps for dx in steps], dtype=np.int64)


DIRECTION_BASIS = direction_basis(3)
CENTER_INDEX = 4  # <0,0> in the 3x3 basis


def half_gaussian_sample(rng: np.random.Generator, sigma: float) -> float:
    """|z| for z ~ Normal(0, sigma^2); exactly 0 when sigma is 0."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    return float(sigma * abs(rng.standard_normal()))


def half_gaussian_pdf(x, sigma: float):
    """Density sqrt(2)/(sigma*sqrt(pi)) * exp(-x^2 / (2 sigma^2)) on x >= 0."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    x = np.asarray(x, dtype=np.float64)
    out = np.sqrt(2.0) / (sigma * np.sqrt(np.pi)) * np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return np.where(x >= 0, out, 0.0)


def round_half_away(v: np.ndarray) -> np.ndarray:
    """Round to nearest integer, halves away from zero."""
    v = np.asarray(v, dtype=np.float64)
    return (np.sign(v) * np.floor(np.abs(v) + 0.5)).astype(np.int64)


@dataclass
class GdcConfig:
    sigma: float
    kernel_size: int = 3
    mode: str = "per_direction"
    delta_base: float = 0.0
    adaptive_scale: bool = False
    sharing: str = "per_forward"

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.kernel_size % 2 != 1 or self.kernel_size < 3:
            raise ValueError(f"kernel size must be odd and >= 3, got {self.kernel_size}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.sharing not in SHARINGS:
            raise ValueError(f"sharing must be one of {SHARINGS}, got {self.sharing!r}")
        if self.delta_base < 0:
            raise ValueError(f"delta_base must be >= 0, got {self.delta_base}")
        if self.mode == "per_direction" and self.delta_base != 0:
            raise ValueError("delta_base only applies in shared mode")


@dataclass
class OffsetSample:
    """One realization of tap offsets, enough to replay a forward bit-exactly.

    ``offsets`` holds k*k-1 non-negative 2-vectors (per_direction) or a single
    one (shared), in offset units; pixel displacement applies ``scale`` in
    per_direction mode and ``delta_base + offset`` in shared mode.
    """

    mode: str
    offsets: np.ndarray
    delta_base: float = 0.0
    scale: float = 1.0
    sigma: float = 0.0
    sharing: str = "per_forward"
    seed: int | None = None
    kernel_size: int = 3

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        if self.offsets.ndim != 2 or self.offsets.shape[1] != 2:
            raise ValueError(f"offsets must be (n,2), got {self.offsets.shape}")
        n_dir = self.kernel_size ** 2 - 1
        if self.mode == "per_direction" and self.offsets.shape[0] != n_dir:
            raise ValueError(f"per_direction needs {n_dir} offset vectors, got {self.offsets.shape[0]}")
        if self.mode == "shared" and self.offsets.shape[0] != 1:
            raise ValueError(f"shared mode needs a single offset vector, got {self.offsets.shape[0]}")
        if (self.offsets < 0).any():
            raise ValueError("offsets must be non-negative (half-Gaussian support)")
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @property
    def deterministic(self) -> bool:
        return self.sigma == 0

    def effective_offsets(self) -> np.ndarray:
        """(k*k, 2) per-direction pixel magnitudes, center row zero."""
        k2 = self.kernel_size ** 2
        eff = np.zeros((k2, 2), dtype=np.float64)
        center = k2 // 2
        if self.mode == "per_direction":
            vals = self.scale * self.offsets
            eff[:center] = vals[:center]
            eff[center + 1:] = vals[center:]
        else:
            eff[:] = self.delta_base + self.offsets[0]
            eff[center] = 0.0
        return eff

    def displacements(self) -> np.ndarray:
        """(k*k, 2) integer tap displacements: round_half_away(eff * basis)."""
        basis = direction_basis(self.kernel_size)
        return round_half_away(self.effective_offsets() * basis)

    @classmethod
    def pinned(cls, value, mode: str = "per_direction", delta_base: float = 0.0,
               scale: float = 1.0, kernel_size: int = 3) -> "OffsetSample":
        """Deterministic sample with every offset fixed at ``value`` (scalar or 2-vector)."""
        vec = np.broadcast_to(np.asarray(value, dtype=np.float64), (2,))
        n = kernel_size ** 2 - 1 if mode == "per_direction" else 1
        return cls(mode=mode, offsets=np.tile(vec, (n, 1)), delta_base=delta_base,
                   scale=scale, sigma=0.0, kernel_size=kernel_size)

    def to_json(self) -> str:
        return json.dumps({
            "mode": self.mode,
            "offsets": self.offsets.tolist(),
            "delta_base": self.delta_base,
            "scale": self.scale,
            "sigma": self.sigma,
            "sharing": self.sharing,
            "seed": self.seed,
            "kernel_size": self.kernel_size,
        })

    @classmethod
    def from_json(cls, text: str) -> "OffsetSample":
        d = json.loads(text)
        return cls(mode=d["mode"], offsets=np.asarray(d["offsets"]),
                   delta_base=d.get("delta_base", 0.0), scale=d.get("scale", 1.0),
                   sigma=d.get("sigma", 0.0), sharing=d.get("sharing", "per_forward"),
                   seed=d.get("seed"), kernel_size=d.get("kernel_size", 3))


def sample_offsets(rng: np.random.Generator, config: GdcConfig,
                   image_short_side: int | None = None, seed: int | None = None) -> OffsetSample:
    """Draw one offset realization; each coordinate is an independent half-Gaussian."""
    if config.adaptive_scale:
        if image_short_side is None or image_short_side <= 0:
            raise ValueError("adaptive scale requires a positive image short side")
        scale = float(image_short_side)
    else:
        scale = 1.0
    n = config.kernel_size ** 2 - 1 if config.mode == "per_direction" else 1
    offsets = config.sigma * np.abs(rng.standard_normal((n, 2)))
    return OffsetSample(mode=config.mode, offsets=offsets, delta_base=config.delta_base,
                        scale=scale, sigma=config.sigma, sharing=config.sharing,
                        seed=seed, kernel_size=config.kernel_size)


def draw_offsets(seed: int, config: GdcConfig, image_short_side: int | None = None) -> OffsetSample:
    """Seed-addressed draw; the seed lands in the sample record for replay."""
    return sample_offsets(np.random.default_rng(seed), config, image_short_side, seed=seed)


def taps_for_position(c, sample: OffsetSample, bounds) -> np.ndarray:
    """The k*k integer tap coordinates for center ``c``, clamped into ``bounds``."""
    h, w = bounds
    cy, cx = int(c[0]), int(c[1])
    if not (0 <= cy < h and 0 <= cx < w):
        raise ValueError(f"position {c} outside bounds {bounds}")
    disp = sample.displacements()
    taps = disp + np.array([cy, cx], dtype=np.int64)
    taps[:, 0] = np.clip(taps[:, 0], 0, h - 1)
    taps[:, 1] = np.clip(taps[:, 1], 0, w - 1)
    return taps


# ---------------------------------------------------------------------------
# forward / backward

def _clip_displacements(disp: np.ndarray, h: int, w: int) -> np.ndarray:
    # displacements beyond the map act exactly like +-(dim-1) after clamping
    out = disp.copy()
    out[..., 0] = np.clip(out[..., 0], -(h - 1), h - 1)
    out[..., 1] = np.clip(out[..., 1], -(w - 1), w - 1)
    return out


def _unpad_edge_adjoint(gp: np.ndarray, p: int) -> np.ndarray:
    """Adjoint of replicate padding: fold padded borders back onto edge pixels."""
    if p == 0:
        return gp
    core = gp[:, p:-p, p:-p].copy()
    core[:, 0, :] += gp[:, :p, p:-p].sum(axis=1)
    core[:, -1, :] += gp[:, -p:, p:-p].sum(axis=1)
    core[:, :, 0] += gp[:, p:-p, :p].sum(axis=2)
    core[:, :, -1] += gp[:, p:-p, -p:].sum(axis=2)
    core[:, 0, 0] += gp[:, :p, :p].sum(axis=(1, 2))
    core[:, 0, -1] += gp[:, :p, -p:].sum(axis=(1, 2))
    core[:, -1, 0] += gp[:, -p:, :p].sum(axis=(1, 2))
    core[:, -1, -1] += gp[:, -p:, -p:].sum(axis=(1, 2))
    return core


def _positional_displacements(sample: OffsetSample, h: int, w: int) -> np.ndarray:
    """Independent per-position draws, deterministic from the sample seed."""
    if sample.seed is None:
        raise ValueError("per_position sampling requires a seeded OffsetSample")
    k2 = sample.kernel_size ** 2
    center = k2 // 2
    rng = np.random.default_rng(sample.seed)
    basis = direction_basis(sample.kernel_size).astype(np.float64)
    if sample.mode == "per_direction":
        draw = sample.sigma * np.abs(rng.standard_normal((k2 - 1, h, w, 2)))
        eff = np.zeros((k2, h, w, 2))
        eff[:center] = sample.scale * draw[:center]
        eff[center + 1:] = sample.scale * draw[center:]
    else:
        draw = sample.sigma * np.abs(rng.standard_normal((1, h, w, 2)))
        eff = np.broadcast_to(sample.delta_base + draw, (k2, h, w, 2)).copy()
        eff[center] = 0.0
    return round_half_away(eff * basis[:, None, None, :])


def _kernel_checks(x: Tensor, kernel: Tensor, sample: OffsetSample, depthwise: bool) -> int:
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise ValueError(f"need (C,H,W) input and rank-4 kernel, got {x.shape} / {kernel.shape}")
    k = kernel.shape[2]
    if kernel.shape[3] != k or k != sample.kernel_size:
        raise ValueError(f"kernel {kernel.shape} does not match sample kernel size {sample.kernel_size}")
    if depthwise:
        if kernel.shape[1] != 1 or kernel.shape[0] != x.shape[0]:
            raise ValueError(f"depthwise kernel {kernel.shape} incompatible with input {x.shape}")
    elif kernel.shape[1] != x.shape[0]:
        raise ValueError(f"kernel expects {kernel.shape[1]} channels, input has {x.shape[0]}")
    _same_dtype(x, kernel)
    return k


def _gdc_apply(x: Tensor, kernel: Tensor, sample: OffsetSample, depthwise: bool) -> Tensor:
    k = _kernel_checks(x, kernel, sample, depthwise)
    if sample.sharing == "per_position":
        return _gdc_per_position(x, kernel, sample, depthwise)
    cin, h, w = x.shape
    cout = kernel.shape[0]
    k2 = k * k
    disp = _clip_displacements(sample.displacements(), h, w)
    p = int(np.abs(disp).max())
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p)), mode="edge") if p else x.data
    if depthwise:
        cols = np.empty((cin, k2, h, w), dtype=x.dtype)
        for i, (dy, dx) in enumerate(disp):
            cols[:, i] = xp[:, p + dy: p + dy + h, p + dx: p + dx + w]
        wk = kernel.data.reshape(cin, k2)
        out = np.einsum("ck,ckhw->chw", wk, cols, optimize=True)
    else:
        cols = np.empty((cin, k2, h, w), dtype=x.dtype)
        for i, (dy, dx) in enumerate(disp):
            cols[:, i] = xp[:, p + dy: p + dy + h, p + dx: p + dx + w]
        cols2 = cols.reshape(cin * k2, h * w)
        # kernel (cout,cin,ki,kj) flattens to the same (cin, i=ki*k+kj) layout as cols
        wm = kernel.data.reshape(cout, cin * k2)
        out = (wm @ cols2).reshape(cout, h, w)

    def bwd(g):
        if depthwise:
            if kernel.requires_grad:
                gw = np.einsum("chw,ckhw->ck", g, cols, optimize=True)
                accumulate_grad(kernel, gw.reshape(kernel.data.shape))
            if x.requires_grad:
                gxp = np.zeros((cin, h + 2 * p, w + 2 * p), dtype=x.dtype)
                for i, (dy, dx) in enumerate(disp):
                    gxp[:, p + dy: p + dy + h, p + dx: p + dx + w] += \
                        kernel.data.reshape(cin, k2)[:, i][:, None, None] * g
                accumulate_grad(x, _unpad_edge_adjoint(gxp, p))
            return
        g2 = g.reshape(cout, -1)
        if kernel.requires_grad:
            accumulate_grad(kernel, (g2 @ cols2.T).reshape(kernel.data.shape))
        if x.requires_grad:
            gcols = (wm.T @ g2).reshape(cin, k2, h, w)
            gxp = np.zeros((cin, h + 2 * p, w + 2 * p), dtype=x.dtype)
            for i, (dy, dx) in enumerate(disp):
                gxp[:, p + dy: p + dy + h, p + dx: p + dx + w] += gcols[:, i]
            accumulate_grad(x, _unpad_edge_adjoint(gxp, p))

    name = "gdc_depthwise" if depthwise else "gdc_forward"
    return _make(out, (x, kernel), bwd, name)


def _gdc_per_position(x: Tensor, kernel: Tensor, sample: OffsetSample, depthwise: bool) -> Tensor:
    cin, h, w = x.shape
    cout = kernel.shape[0]
    k = sample.kernel_size
    disp = _positional_displacements(sample, h, w)
    yy = np.arange(h)[:, None]
    xx = np.arange(w)[None, :]
    idx = []
    for i in range(k * k):
        iy = np.clip(yy + disp[i, :, :, 0], 0, h - 1)
        ix = np.clip(xx + disp[i, :, :, 1], 0, w - 1)
        idx.append((iy, ix))
    out = np.zeros((cout, h, w), dtype=x.dtype)
    wk = kernel.data.reshape(cout, kernel.shape[1], k * k)
    for i, (iy, ix) in enumerate(idx):
        sl = x.data[:, iy, ix]
        if depthwise:
            out += wk[:, 0, i][:, None, None] * sl
        else:
            out += (wk[:, :, i] @ sl.reshape(cin, -1)).reshape(cout, h, w)

    def bwd(g):
        g2 = g.reshape(cout, -1)
        if kernel.requires_grad:
            gw = np.zeros_like(kernel.data)
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            chan = np.arange(cin)[:, None, None]
        for i, (iy, ix) in enumerate(idx):
            ki, kj = divmod(i, k)
            sl = x.data[:, iy, ix]
            if depthwise:
                if kernel.requires_grad:
                    gw[:, 0, ki, kj] = (g * sl).sum(axis=(1, 2))
                if x.requires_grad:
                    np.add.at(gx, (chan, iy[None], ix[None]),
                              kernel.data[:, 0, ki, kj][:, None, None] * g)
            else:
                if kernel.requires_grad:
                    gw[:, :, ki, kj] = g2 @ sl.reshape(cin, -1).T
                if x.requires_grad:
                    tmp = (kernel.data[:, :, ki, kj].T @ g2).reshape(cin, h, w)
                    np.add.at(gx, (chan, iy[None], ix[None]), tmp)
        if kernel.requires_grad:
            accumulate_grad(kernel, gw)
        if x.requires_grad:
            accumulate_grad(x, gx)

    name = "gdc_depthwise" if depthwise else "gdc_forward"
    return _make(out, (x, kernel), bwd, name)


def gdc_forward(x: Tensor, kernel: Tensor, sample: OffsetSample) -> Tensor:
    """Dynamic-tap convolution, (Cin,H,W) x (Cout,Cin,k,k) -> (Cout,H,W).

    Output position <y,x> sums kernel weights against the input at the taps
    of ``taps_for_position((y,x), sample, (H,W))``; differentiable wrt both
    input and kernel for the fixed sample.
    """
    return _gdc_apply(x, kernel, sample, depthwise=False)


def gdc_depthwise(x: Tensor, kernel: Tensor, sample: OffsetSample) -> Tensor:
    """Per-channel dynamic-tap filter, kernel (C,1,k,k)."""
    return _gdc_apply(x, kernel, sample, depthwise=True)
