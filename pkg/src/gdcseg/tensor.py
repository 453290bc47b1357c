"""Minimal dense tensor with reverse-mode gradients.

Covers exactly the forward ops the segmentation nets need (convolutions,
resampling, softmax, weighted cross-entropy) in f32 and f64. The graph is
rebuilt on every forward pass: each op returns a fresh Tensor holding a
backward closure over its parents, and ``backward()`` walks the tape in
reverse topological order. No op mutates its inputs; the only sanctioned
mutation is ``sgd_step`` on parameters.
"""

from __future__ import annotations

import struct

import numpy as np

DTYPES = {"f32": np.float32, "f64": np.float64}
_ALLOWED = (np.dtype(np.float32), np.dtype(np.float64))

CE_EPSILON = 1e-12


class NonFiniteError(ArithmeticError):
    """An op produced NaN/Inf; surfaced immediately instead of propagating."""


def as_dtype(dtype) -> np.dtype:
    if isinstance(dtype, str):
        if dtype not in DTYPES:
            raise ValueError(f"unsupported dtype {dtype!r}; expected 'f32' or 'f64'")
        return np.dtype(DTYPES[dtype])
    d = np.dtype(dtype)
    if d not in _ALLOWED:
        raise ValueError(f"unsupported dtype {d}; expected float32 or float64")
    return d


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced non-finite values")


class Tensor:
    """Dense rank-N real array plus an optional gradient tape node."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "clamp_count")

    def __init__(self, data, dtype=None, requires_grad=False, name=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(as_dtype(dtype), copy=False)
        elif arr.dtype not in _ALLOWED:
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        _check_finite(self.data, "tensor construction")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.clamp_count = 0

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __add__(self, other):
        return add(self, other)

    def item(self) -> float:
        return float(self.data)

    def detached(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)


def parameter(data, dtype="f32", name=None) -> Tensor:
    return Tensor(data, dtype=dtype, requires_grad=True, name=name)


def _make(data, parents, backward_fn, op: str) -> Tensor:
    """Wrap op output; backward_fn only attached when some parent needs grad."""
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out.name = None
    out.clamp_count = 0
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def accumulate_grad(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad = t.grad + g


def _same_dtype(*ts: Tensor) -> np.dtype:
    d = ts[0].dtype
    for t in ts[1:]:
        if t.dtype != d:
            raise ValueError(f"dtype mismatch: {d} vs {t.dtype}")
    return d


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss; fills .grad on reachable leaves."""
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grad(params) -> None:
    for p in params:
        p.grad = None


def sgd_step(params, grads, lr: float) -> None:
    """p <- p - lr * g, in place. Raises if a gradient is missing or misshapen."""
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise ValueError("params/grads length mismatch")
    for p, g in zip(params, grads):
        if g is None:
            raise ValueError(f"missing gradient for parameter {p.name!r} (backward not run?)")
        g = np.asarray(g)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        p.data -= lr * g.astype(p.data.dtype, copy=False)


# ---------------------------------------------------------------------------
# elementwise / shape ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = a.data + b.data

    def bwd(g):
        accumulate_grad(a, g)
        accumulate_grad(b, g)

    return _make(out, (a, b), bwd, "add")


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias (C,) to a (C,H,W) map."""
    _same_dtype(x, b)
    if b.data.ndim != 1 or b.shape[0] != x.shape[0]:
        raise ValueError(f"bias shape {b.shape} incompatible with input {x.shape}")
    out = x.data + b.data[:, None, None]

    def bwd(g):
        accumulate_grad(x, g)
        accumulate_grad(b, g.sum(axis=(1, 2)))

    return _make(out, (x, b), bwd, "bias_add")


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def bwd(g):
        accumulate_grad(x, g * (x.data > 0))

    return _make(out, (x,), bwd, "relu")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype(a, b)
    if a.shape[1:] != b.shape[1:]:
        raise ValueError(f"spatial mismatch: {a.shape} vs {b.shape}")
    out = np.concatenate([a.data, b.data], axis=0)
    ca = a.shape[0]

    def bwd(g):
        accumulate_grad(a, g[:ca])
        accumulate_grad(b, g[ca:])

    return _make(out, (a, b), bwd, "concat_channels")


def tensor_sum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)

    def bwd(g):
        accumulate_grad(x, np.broadcast_to(g, x.shape).astype(x.dtype))

    return _make(out, (x,), bwd, "sum")


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over axis 0 of a (C,H,W) map; per-pixel simplex output."""
    m = x.data.max(axis=0, keepdims=True)
    e = np.exp(x.data - m)
    p = e / e.sum(axis=0, keepdims=True)

    def bwd(g):
        dot = (g * p).sum(axis=0, keepdims=True)
        accumulate_grad(x, p * (g - dot))

    return _make(p, (x,), bwd, "softmax_channels")


# ---------------------------------------------------------------------------
# convolutions (cross-correlation, zero padding)


def _conv_checks(x: Tensor, w: Tensor, stride: int, pad: int, dilation: int, depthwise=False):
    if x.data.ndim != 3:
        raise ValueError(f"input must be (C,H,W), got {x.shape}")
    if w.data.ndim != 4:
        raise ValueError(f"kernel must be rank 4, got {w.shape}")
    cout, cin_k, kh, kw = w.shape
    if kh != kw:
        raise ValueError(f"kernel must be square, got {kh}x{kw}")
    if kh % 2 != 1:
        raise ValueError(f"kernel size must be odd, got {kh}")
    if depthwise:
        if cin_k != 1 or cout != x.shape[0]:
            raise ValueError(f"depthwise kernel {w.shape} incompatible with input {x.shape}")
    elif cin_k != x.shape[0]:
        raise ValueError(f"kernel expects {cin_k} input channels, input has {x.shape[0]}")
    if stride < 1 or pad < 0 or dilation < 1:
        raise ValueError("need stride >= 1, pad >= 0, dilation >= 1")
    _same_dtype(x, w)
    return kh


def _out_size(n: int, k: int, stride: int, pad: int, dilation: int) -> int:
    eff = dilation * (k - 1) + 1
    o = (n + 2 * pad - eff) // stride + 1
    if o < 1:
        raise ValueError(f"kernel does not fit: size {n}, k {k}, pad {pad}, dilation {dilation}")
    return o


def _pad_zero(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    c, h, w = x.shape
    out = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    out[:, pad:pad + h, pad:pad + w] = x
    return out


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0, dilation: int = 1) -> Tensor:
    """Dense 2-D cross-correlation: (Cin,H,W) x (Cout,Cin,k,k) -> (Cout,H',W')."""
    k = _conv_checks(x, w, stride, pad, dilation)
    cin, h, wd = x.shape
    cout = w.shape[0]
    oh = _out_size(h, k, stride, pad, dilation)
    ow = _out_size(wd, k, stride, pad, dilation)
    xp = _pad_zero(x.data, pad)

    def taps(ki, kj):
        return (slice(ki * dilation, ki * dilation + (oh - 1) * stride + 1, stride),
                slice(kj * dilation, kj * dilation + (ow - 1) * stride + 1, stride))

    cols = np.empty((cin, k, k, oh, ow), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            ys, xs = taps(ki, kj)
            cols[:, ki, kj] = xp[:, ys, xs]
    cols2 = cols.reshape(cin * k * k, oh * ow)
    wm = w.data.reshape(cout, cin * k * k)
    out = (wm @ cols2).reshape(cout, oh, ow)

    def bwd(g):
        g2 = g.reshape(cout, -1)
        if w.requires_grad:
            accumulate_grad(w, (g2 @ cols2.T).reshape(w.data.shape))
        if x.requires_grad:
            gcols = (wm.T @ g2).reshape(cin, k, k, oh, ow)
            gxp = np.zeros((cin, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
            for ki in range(k):
                for kj in range(k):
                    ys, xs = taps(ki, kj)
                    gxp[:, ys, xs] += gcols[:, ki, kj]
            accumulate_grad(x, gxp[:, pad:pad + h, pad:pad + wd] if pad else gxp)

    return _make(out, (x, w), bwd, "conv2d")


def depthwise_conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0, dilation: int = 1) -> Tensor:
    """Per-channel 2-D filter: (C,H,W) x (C,1,k,k) -> (C,H',W')."""
    k = _conv_checks(x, w, stride, pad, dilation, depthwise=True)
    c, h, wd = x.shape
    oh = _out_size(h, k, stride, pad, dilation)
    ow = _out_size(wd, k, stride, pad, dilation)
    xp = _pad_zero(x.data, pad)
    out = np.zeros((c, oh, ow), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            sl = xp[:, ki * dilation: ki * dilation + (oh - 1) * stride + 1: stride,
                    kj * dilation: kj * dilation + (ow - 1) * stride + 1: stride]
            out += w.data[:, 0, ki, kj][:, None, None] * sl

    def bwd(g):
        if w.requires_grad:
            gw = np.zeros_like(w.data)
        if x.requires_grad:
            gxp = np.zeros((c, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
        for ki in range(k):
            for kj in range(k):
                ys = slice(ki * dilation, ki * dilation + (oh - 1) * stride + 1, stride)
                xs = slice(kj * dilation, kj * dilation + (ow - 1) * stride + 1, stride)
                if w.requires_grad:
                    gw[:, 0, ki, kj] = (g * xp[:, ys, xs]).sum(axis=(1, 2))
                if x.requires_grad:
                    gxp[:, ys, xs] += w.data[:, 0, ki, kj][:, None, None] * g
        if w.requires_grad:
            accumulate_grad(w, gw)
        if x.requires_grad:
            accumulate_grad(x, gxp[:, pad:pad + h, pad:pad + wd] if pad else gxp)

    return _make(out, (x, w), bwd, "depthwise_conv2d")


def pointwise_conv(x: Tensor, w: Tensor) -> Tensor:
    """Per-pixel channel mix: (Cin,H,W) x (Cout,Cin,1,1) -> (Cout,H,W)."""
    if w.data.ndim != 4 or w.shape[2:] != (1, 1):
        raise ValueError(f"pointwise kernel must be (Cout,Cin,1,1), got {w.shape}")
    if w.shape[1] != x.shape[0]:
        raise ValueError(f"kernel expects {w.shape[1]} channels, input has {x.shape[0]}")
    _same_dtype(x, w)
    cin, h, wd = x.shape
    cout = w.shape[0]
    wm = w.data[:, :, 0, 0]
    out = (wm @ x.data.reshape(cin, -1)).reshape(cout, h, wd)

    def bwd(g):
        g2 = g.reshape(cout, -1)
        if w.requires_grad:
            accumulate_grad(w, (g2 @ x.data.reshape(cin, -1).T)[:, :, None, None])
        if x.requires_grad:
            accumulate_grad(x, (wm.T @ g2).reshape(cin, h, wd))

    return _make(out, (x, w), bwd, "pointwise_conv")


def separable_conv(x: Tensor, depthwise: Tensor, pointwise: Tensor,
                   stride: int = 1, pad: int | None = None, dilation: int = 1) -> Tensor:
    """Depthwise filtering then pointwise channel mixing; pad defaults to 'same'."""
    if pad is None:
        pad = dilation * (depthwise.shape[2] - 1) // 2
    return pointwise_conv(depthwise_conv2d(x, depthwise, stride=stride, pad=pad, dilation=dilation), pointwise)


# ---------------------------------------------------------------------------
# resampling


def _resize_matrix(n_out: int, n_in: int, dtype) -> np.ndarray:
    # half-pixel-center sampling, edges clamped; exact identity when sizes match
    m = np.zeros((n_out, n_in), dtype=dtype)
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), (1.0 - t).astype(dtype))
    np.add.at(m, (rows, i1), t.astype(dtype))
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resample of a (C,H,W) map to (C,out_h,out_w)."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"invalid target size {out_h}x{out_w}")
    c, h, w = x.shape
    rm = _resize_matrix(out_h, h, x.dtype)
    cm = _resize_matrix(out_w, w, x.dtype)
    tmp = np.tensordot(rm, x.data, axes=([1], [1]))          # (oh, C, W)
    out = np.tensordot(tmp, cm, axes=([2], [1]))             # (oh, C, ow)
    out = np.ascontiguousarray(out.transpose(1, 0, 2))

    def bwd(g):
        t2 = np.tensordot(rm.T, g, axes=([1], [1]))          # (H, C, ow)
        gx = np.tensordot(t2, cm, axes=([2], [0]))           # (H, C, W)
        accumulate_grad(x, np.ascontiguousarray(gx.transpose(1, 0, 2)))

    return _make(out, (x,), bwd, "bilinear_resize")


# ---------------------------------------------------------------------------
# loss


def weighted_ce_loss(probs: Tensor, labels: np.ndarray, weights: np.ndarray,
                     reduction: str = "mean") -> Tensor:
    """Weighted cross-entropy over labeled pixels.

    ``labels`` is (H,W) int with -1 marking unlabeled pixels, which contribute
    nothing. Probabilities below CE_EPSILON are clamped; the clamp count is
    exposed on the returned tensor rather than raised.
    """
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    labels = np.asarray(labels)
    if labels.shape != probs.shape[1:]:
        raise ValueError(f"label shape {labels.shape} != spatial shape {probs.shape[1:]}")
    n_cat = probs.shape[0]
    ys, xs = np.nonzero(labels >= 0)
    if ys.size == 0:
        raise ValueError("no labeled pixels")
    cls = labels[ys, xs]
    if cls.max() >= n_cat:
        raise ValueError(f"label id {cls.max()} out of range for {n_cat} categories")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 1 or weights.shape[0] < n_cat:
        raise ValueError(f"need one weight per category ({n_cat}), got shape {weights.shape}")
    pv = probs.data[cls, ys, xs].astype(np.float64)
    clamped = pv < CE_EPSILON
    pc = np.maximum(pv, CE_EPSILON)
    wv = weights[cls]
    total = -(wv * np.log(pc)).sum()
    denom = float(ys.size) if reduction == "mean" else 1.0
    out = np.asarray(total / denom, dtype=probs.dtype)

    def bwd(g):
        gp = np.zeros_like(probs.data)
        coeff = np.where(clamped, 0.0, -wv / pc) * (float(g) / denom)
        gp[cls, ys, xs] = coeff.astype(probs.dtype)
        accumulate_grad(probs, gp)

    node = _make(out, (probs,), bwd, "weighted_ce_loss")
    node.clamp_count = int(clamped.sum())
    return node


# ---------------------------------------------------------------------------
# binary weight file ("GDCW"): little-endian, u32 ints, f32 payloads

_MAGIC = b"GDCW"
_VERSION = 1


def write_weight_file(path, named_arrays: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        for name, arr in named_arrays.items():
            arr = np.asarray(arr.data if isinstance(arr, Tensor) else arr, dtype=np.float32)
            enc = name.encode("utf-8")
            fh.write(struct.pack("<I", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


def read_weight_file(path) -> dict:
    def take(fh, n):
        b = fh.read(n)
        if len(b) != n:
            raise ValueError("truncated weight file")
        return b

    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not a GDCW weight file")
        version = struct.unpack("<I", take(fh, 4))[0]
        if version != _VERSION:
            raise ValueError(f"unsupported weight file version {version}")
        while True:
            head = fh.read(4)
            if not head:
                break
            name_len = struct.unpack("<I", head)[0]
            name = take(fh, name_len).decode("utf-8")
            rank = struct.unpack("<I", take(fh, 4))[0]
            dims = struct.unpack(f"<{rank}I", take(fh, 4 * rank))
            count = int(np.prod(dims)) if rank else 1
            payload = take(fh, 4 * count)
            out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return out
