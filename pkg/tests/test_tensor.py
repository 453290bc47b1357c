import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdcseg import tensor as T
from helpers import check_op_gradients, conv2d_loops, fd_gradient, rel_err


def t64(arr, **kw):
    return T.Tensor(np.asarray(arr, dtype=np.float64), dtype="f64", **kw)


# ---------------------------------------------------------------------------
# construction and invariants

def test_tensor_rejects_nonfinite():
    with pytest.raises(T.NonFiniteError):
        T.Tensor([1.0, np.nan])
    with pytest.raises(T.NonFiniteError):
        T.Tensor([np.inf])


def test_op_surfaces_nonfinite():
    x = t64([[1e308]])
    big = t64([[1e308]])
    with pytest.raises(T.NonFiniteError):
        T.add(x, big)


def test_dtype_mismatch_rejected():
    a = T.Tensor(np.ones((2, 2, 2)), dtype="f32")
    b = T.Tensor(np.ones((2, 2, 2)), dtype="f64")
    with pytest.raises(ValueError):
        T.add(a, b)


def test_unsupported_dtype_rejected():
    with pytest.raises(ValueError):
        T.Tensor([1.0], dtype="f16")


# ---------------------------------------------------------------------------
# conv2d

def test_conv2d_identity_1x1():
    rng = np.random.default_rng(0)
    x = t64(rng.standard_normal((3, 5, 5)))
    w = np.zeros((3, 3, 1, 1))
    for c in range(3):
        w[c, c, 0, 0] = 1.0
    out = T.conv2d(x, t64(w))
    np.testing.assert_array_equal(out.data, x.data)


def test_conv2d_zero_kernel():
    x = t64(np.random.default_rng(1).standard_normal((2, 4, 4)))
    out = T.conv2d(x, t64(np.zeros((5, 2, 3, 3))), pad=1)
    assert (out.data == 0).all()


def test_conv2d_ones_hand_case():
    x = t64(np.ones((1, 3, 3)))
    w = t64(np.ones((1, 1, 3, 3)))
    out = T.conv2d(x, w, stride=1, pad=1)
    assert out.data[0, 1, 1] == 9.0
    assert out.data[0, 0, 0] == 4.0
    assert out.data[0, 0, 1] == 6.0


def test_conv2d_shape_and_errors():
    x = t64(np.ones((2, 6, 6)))
    with pytest.raises(ValueError):
        T.conv2d(x, t64(np.ones((1, 3, 3, 3))))  # channel mismatch
    with pytest.raises(ValueError):
        T.conv2d(x, t64(np.ones((1, 2, 2, 2))))  # even kernel
    with pytest.raises(ValueError):
        T.conv2d(x, t64(np.ones((1, 2, 3, 3))), stride=0)
    out = T.conv2d(x, t64(np.ones((4, 2, 3, 3))), stride=2, pad=1)
    assert out.shape == (4, 3, 3)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(3, 8), st.integers(3, 8),
       st.integers(0, 2), st.integers(1, 2), st.integers(0, 2 ** 31 - 1))
def test_conv2d_matches_loop_oracle(cin, cout, h, w, pad, stride, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((cin, h, w))
    k = rng.standard_normal((cout, cin, 3, 3))
    if (h + 2 * pad - 3) < 0 or (w + 2 * pad - 3) < 0:
        return
    got = T.conv2d(t64(x), t64(k), stride=stride, pad=pad).data
    want = conv2d_loops(x, k, stride=stride, pad=pad)
    assert np.abs(got - want).max() < 1e-12


def test_conv2d_dilation_matches_oracle():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 9, 9))
    k = rng.standard_normal((3, 2, 3, 3))
    got = T.conv2d(t64(x), t64(k), pad=2, dilation=2).data
    want = conv2d_loops(x, k, pad=2, dilation=2)
    assert np.abs(got - want).max() < 1e-12


def test_dilated_tap_coordinates():
    # tap at <i,j> + 2*e for every basis direction e
    x = np.zeros((1, 9, 9))
    k = np.zeros((1, 1, 3, 3))
    taps = []
    for ki in range(3):
        for kj in range(3):
            xi = np.zeros((1, 9, 9))
            xi[0, 4 + 2 * (ki - 1), 4 + 2 * (kj - 1)] = 1.0
            kk = np.zeros((1, 1, 3, 3))
            kk[0, 0, ki, kj] = 1.0
            out = T.conv2d(t64(xi), t64(kk), pad=2, dilation=2)
            taps.append(out.data[0, 4, 4])
    assert taps == [1.0] * 9


# ---------------------------------------------------------------------------
# pointwise / separable

def test_pointwise_identity_and_sum():
    rng = np.random.default_rng(2)
    x = t64(rng.standard_normal((2, 4, 4)))
    eye = np.eye(2)[:, :, None, None]
    np.testing.assert_array_equal(T.pointwise_conv(x, t64(eye)).data, x.data)
    summed = T.pointwise_conv(x, t64(np.ones((1, 2, 1, 1))))
    np.testing.assert_allclose(summed.data[0], x.data.sum(axis=0), atol=1e-14)


def test_pointwise_matches_matmul_oracle():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 5, 6))
    w = rng.standard_normal((2, 4, 1, 1))
    got = T.pointwise_conv(t64(x), t64(w)).data
    want = (w[:, :, 0, 0] @ x.reshape(4, -1)).reshape(2, 5, 6)
    assert np.abs(got - want).max() < 1e-12


def test_pointwise_channel_mismatch():
    with pytest.raises(ValueError):
        T.pointwise_conv(t64(np.ones((3, 2, 2))), t64(np.ones((1, 2, 1, 1))))


def test_separable_identity():
    rng = np.random.default_rng(4)
    x = t64(rng.standard_normal((3, 5, 5)))
    dw = np.zeros((3, 1, 3, 3))
    dw[:, 0, 1, 1] = 1.0  # delta depthwise kernels
    eye = np.eye(3)[:, :, None, None]
    out = T.separable_conv(x, t64(dw), t64(eye))
    np.testing.assert_allclose(out.data, x.data, atol=1e-14)


def test_separable_equals_composed_conv2d():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((3, 6, 6))
    dw = rng.standard_normal((3, 1, 3, 3))
    pw = rng.standard_normal((4, 3, 1, 1))
    got = T.separable_conv(t64(x), t64(dw), t64(pw), dilation=1).data
    composed = pw[:, :, 0, 0][:, :, None, None] * dw[None, :, 0]  # rank-1 kernel
    want = conv2d_loops(x, composed, pad=1)
    assert np.abs(got - want).max() < 1e-10


def test_separable_dilation_taps():
    got = T.separable_conv(t64(np.ones((1, 7, 7))),
                           t64(np.ones((1, 1, 3, 3))),
                           t64(np.ones((1, 1, 1, 1))), dilation=2)
    # center pixel sees all 9 taps at spacing 2
    assert got.data[0, 3, 3] == 9.0


# ---------------------------------------------------------------------------
# activations / resampling / concat

def test_relu_values():
    out = T.relu(t64([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])


def test_softmax_equal_logits():
    x = t64(np.zeros((5, 2, 2)))
    p = T.softmax_channels(x).data
    np.testing.assert_allclose(p, 0.2, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 6), st.integers(1, 4), st.integers(0, 2 ** 31 - 1))
def test_softmax_simplex_property(c, hw, seed):
    rng = np.random.default_rng(seed)
    p = T.softmax_channels(t64(rng.standard_normal((c, hw, hw)) * 5)).data
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=0), 1.0, atol=1e-6)


def test_bilinear_identity_exact():
    rng = np.random.default_rng(6)
    x = t64(rng.standard_normal((2, 5, 7)))
    out = T.bilinear_resize(x, 5, 7)
    np.testing.assert_array_equal(out.data, x.data)


def test_bilinear_constant_preserved():
    x = t64(np.full((1, 4, 4), 3.25))
    out = T.bilinear_resize(x, 9, 13)
    np.testing.assert_allclose(out.data, 3.25, atol=1e-12)


def test_bilinear_rejects_zero_size():
    with pytest.raises(ValueError):
        T.bilinear_resize(t64(np.ones((1, 4, 4))), 0, 4)


def test_concat_channels():
    a = t64(np.ones((2, 3, 3)))
    b = t64(np.zeros((1, 3, 3)))
    out = T.concat_channels(a, b)
    assert out.shape == (3, 3, 3)
    with pytest.raises(ValueError):
        T.concat_channels(a, t64(np.ones((1, 2, 2))))


# ---------------------------------------------------------------------------
# weighted cross-entropy

def test_ce_perfect_prediction_zero_loss():
    labels = np.array([[0, 1], [-1, 1]])
    probs = np.zeros((2, 2, 2))
    probs[0] = [[1, 0], [0.5, 0]]
    probs[1] = [[0, 1], [0.5, 1]]
    loss = T.weighted_ce_loss(t64(probs), labels, np.ones(2))
    assert loss.item() < 1e-9


def test_ce_uniform_prediction_ln_n():
    for n in (2, 3, 7):
        labels = np.zeros((3, 3), dtype=np.int64)
        probs = np.full((n, 3, 3), 1.0 / n)
        loss = T.weighted_ce_loss(t64(probs), labels, np.ones(n))
        assert abs(loss.item() - math.log(n)) < 1e-12


def test_ce_two_pixel_hand_case():
    # pixel A: class 0 with p=0.8, weight 0.3; pixel B: class 1 with p=0.6, weight 0.7
    labels = np.array([[0, 1]])
    probs = np.zeros((2, 1, 2))
    probs[0, 0] = [0.8, 0.4]
    probs[1, 0] = [0.2, 0.6]
    expected = -(0.3 * math.log(0.8) + 0.7 * math.log(0.6)) / 2
    loss = T.weighted_ce_loss(t64(probs), labels, np.array([0.3, 0.7]))
    assert abs(loss.item() - expected) < 1e-12
    loss_sum = T.weighted_ce_loss(t64(probs), labels, np.array([0.3, 0.7]), reduction="sum")
    assert abs(loss_sum.item() - expected * 2) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_ce_ignores_unlabeled_content(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(-1, 3, size=(5, 5))
    if (labels >= 0).sum() == 0:
        labels[0, 0] = 0
    logits = rng.standard_normal((3, 5, 5))
    base = T.softmax_channels(t64(logits)).data
    loss_a = T.weighted_ce_loss(t64(base), labels, np.ones(3)).item()
    scrambled = base.copy()
    scrambled[:, labels < 0] = rng.random((3, int((labels < 0).sum())))
    loss_b = T.weighted_ce_loss(t64(scrambled), labels, np.ones(3)).item()
    assert loss_a == loss_b


def test_ce_clamp_counter():
    labels = np.array([[0]])
    probs = np.zeros((2, 1, 1))
    probs[1, 0, 0] = 1.0  # p(class 0) == 0 exactly
    loss = T.weighted_ce_loss(t64(probs), labels, np.ones(2))
    assert loss.clamp_count == 1
    assert np.isfinite(loss.item())


def test_ce_errors():
    with pytest.raises(ValueError):
        T.weighted_ce_loss(t64(np.ones((2, 2, 2)) / 2), np.full((2, 2), -1), np.ones(2))
    with pytest.raises(ValueError):
        T.weighted_ce_loss(t64(np.ones((2, 2, 2)) / 2), np.full((2, 2), 5), np.ones(2))


# ---------------------------------------------------------------------------
# backward / sgd

def test_sum_gradient_all_ones():
    x = t64(np.random.default_rng(8).standard_normal((3, 4)), requires_grad=True)
    T.backward(T.tensor_sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_requires_scalar():
    x = t64(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        T.backward(T.relu(x))


def test_sgd_step_zero_lr_and_missing_grad():
    p = T.parameter(np.ones(3), dtype="f64")
    T.sgd_step([p], [np.ones(3)], lr=0.0)
    np.testing.assert_array_equal(p.data, np.ones(3))
    with pytest.raises(ValueError):
        T.sgd_step([p], [None], lr=0.1)
    T.sgd_step([p], [np.full(3, 2.0)], lr=0.5)
    np.testing.assert_allclose(p.data, np.zeros(3))


def test_grad_accumulates_over_reuse():
    x = t64([2.0], requires_grad=True)
    y = T.add(x, x)
    T.backward(T.tensor_sum(y))
    np.testing.assert_array_equal(x.grad, [2.0])


@pytest.mark.parametrize("seed", range(20))
def test_gradient_suite_all_ops(seed):
    """Analytic gradients match central finite differences for every op."""
    rng = np.random.default_rng(seed)

    x = T.Tensor(rng.standard_normal((2, 5, 5)), dtype="f64", requires_grad=True)
    w = T.parameter(rng.standard_normal((3, 2, 3, 3)), dtype="f64", name="w")
    check_op_gradients(lambda: T.tensor_sum(T.conv2d(x, w, stride=1, pad=1)), [x, w])
    check_op_gradients(
        lambda: T.tensor_sum(T.relu(T.conv2d(x, w, stride=2, pad=1, dilation=1))), [x, w])

    dw = T.parameter(rng.standard_normal((2, 1, 3, 3)), dtype="f64", name="dw")
    pw = T.parameter(rng.standard_normal((3, 2, 1, 1)), dtype="f64", name="pw")
    check_op_gradients(lambda: T.tensor_sum(T.separable_conv(x, dw, pw, dilation=2)),
                       [x, dw, pw])

    b = T.parameter(rng.standard_normal(2), dtype="f64", name="b")
    check_op_gradients(lambda: T.tensor_sum(T.relu(T.bias_add(x, b))), [x, b])

    check_op_gradients(lambda: T.tensor_sum(T.bilinear_resize(x, 9, 7)), [x])
    check_op_gradients(lambda: T.tensor_sum(T.bilinear_resize(x, 3, 2)), [x])

    y = T.Tensor(rng.standard_normal((2, 5, 5)), dtype="f64", requires_grad=True)
    check_op_gradients(lambda: T.tensor_sum(T.concat_channels(x, y)), [x, y])

    labels = rng.integers(-1, 3, size=(5, 5))
    labels[0, 0] = 0
    weights = rng.random(3) + 0.1
    logits = T.Tensor(rng.standard_normal((3, 5, 5)), dtype="f64", requires_grad=True)
    check_op_gradients(
        lambda: T.weighted_ce_loss(T.softmax_channels(logits), labels, weights), [logits])


# ---------------------------------------------------------------------------
# weight file round trip

def test_weight_file_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    named = {
        "stem.conv1": rng.standard_normal((4, 3, 3, 3)).astype(np.float32),
        "stem.pw": rng.standard_normal((2, 4, 1, 1)).astype(np.float32),
    }
    path = tmp_path / "weights.gdcw"
    T.write_weight_file(path, named)
    back = T.read_weight_file(path)
    assert set(back) == set(named)
    for k in named:
        np.testing.assert_array_equal(back[k], named[k])


def test_weight_file_rejects_garbage(tmp_path):
    path = tmp_path / "bad.gdcw"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError):
        T.read_weight_file(path)
