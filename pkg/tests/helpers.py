"""Shared oracles for the test suite: brute-force convolution and finite
differences. These stay loop-based and independent of the library's vectorized
paths on purpose."""

import numpy as np

from gdcseg import tensor as T


def conv2d_loops(x, w, stride=1, pad=0, dilation=1):
    """Triple-loop cross-correlation oracle with zero padding."""
    cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    eff = dilation * (k - 1) + 1
    oh = (h + 2 * pad - eff) // stride + 1
    ow = (wd + 2 * pad - eff) // stride + 1
    out = np.zeros((cout, oh, ow), dtype=x.dtype)
    for co in range(cout):
        for oy in range(oh):
            for ox in range(ow):
                acc = 0.0
                for ci in range(cin):
                    for ky in range(k):
                        for kx in range(k):
                            iy = oy * stride + ky * dilation - pad
                            ix = ox * stride + kx * dilation - pad
                            if 0 <= iy < h and 0 <= ix < wd:
                                acc += x[ci, iy, ix] * w[co, ci, ky, kx]
                out[co, oy, ox] = acc
    return out


def rel_err(analytic, numeric, floor=1e-4):
    """Elementwise |a-n| / max(|a|, |n|, floor), reduced to the max."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max())


def fd_gradient(fn, param, h=1e-5):
    """Central finite differences of a scalar-valued fn wrt a parameter Tensor."""
    grad = np.zeros_like(param.data)
    flat = param.data.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        lp = fn()
        flat[i] = orig - h
        lm = fn()
        flat[i] = orig
        gflat[i] = (lp - lm) / (2 * h)
    return grad


def check_op_gradients(build_loss, params, h=1e-5, tol=1e-4):
    """Backward pass vs finite differences for every given parameter."""
    loss = build_loss()
    T.backward(loss)
    worst = 0.0
    for p in params:
        assert p.grad is not None, f"no gradient for {p.name or p}"
        assert p.grad.shape == p.data.shape
        analytic = p.grad.copy()
        numeric = fd_gradient(lambda: build_loss().item(), p, h=h)
        worst = max(worst, rel_err(analytic, numeric))
    for p in params:
        p.grad = None
    assert worst < tol, f"gradient mismatch: rel err {worst:.3e} >= {tol}"
    return worst
