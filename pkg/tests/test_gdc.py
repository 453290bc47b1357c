import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from gdcseg import gdc
from gdcseg import tensor as T
from helpers import check_op_gradients, conv2d_loops


def t64(arr, **kw):
    return T.Tensor(np.asarray(arr, dtype=np.float64), dtype="f64", **kw)


# ---------------------------------------------------------------------------
# direction basis

def test_direction_basis_layout():
    basis = gdc.direction_basis(3)
    assert basis.shape == (9, 2)
    assert basis.tolist()[0] == [-1, -1]
    assert basis.tolist()[-1] == [1, 1]
    assert basis[gdc.CENTER_INDEX].tolist() == [0, 0]
    # the only zero vector is the center
    assert (np.abs(basis).sum(axis=1) == 0).sum() == 1


def test_direction_basis_extended():
    basis5 = gdc.direction_basis(5)
    assert basis5.shape == (25, 2)
    assert basis5[12].tolist() == [0, 0]
    with pytest.raises(ValueError):
        gdc.direction_basis(4)


# ---------------------------------------------------------------------------
# half-Gaussian sampling

def test_half_gaussian_sigma_zero():
    rng = np.random.default_rng(0)
    assert gdc.half_gaussian_sample(rng, 0.0) == 0.0


def test_half_gaussian_rejects_negative_sigma():
    with pytest.raises(ValueError):
        gdc.half_gaussian_sample(np.random.default_rng(0), -0.1)


def test_half_gaussian_mean_matches_closed_form():
    rng = np.random.default_rng(123)
    n = 100_000
    draws = np.array([gdc.half_gaussian_sample(rng, 1.0) for _ in range(n)])
    assert (draws >= 0).all()
    assert abs(draws.mean() - math.sqrt(2 / math.pi)) < 0.01


def test_half_gaussian_pdf_at_zero():
    # density sqrt(2)/(sigma*sqrt(pi)) at the origin
    assert abs(gdc.half_gaussian_pdf(0.0, 1.0) - 0.7979) < 1e-4
    assert abs(gdc.half_gaussian_pdf(0.0, 2.0) - math.sqrt(2) / (2 * math.sqrt(math.pi))) < 1e-12
    assert gdc.half_gaussian_pdf(-1.0, 1.0) == 0.0


def test_half_gaussian_ks_against_half_normal():
    rng = np.random.default_rng(7)
    for sigma in (0.5, 1.0, 2.0):
        draws = sigma * np.abs(rng.standard_normal(100_000))
        res = stats.kstest(draws, stats.halfnorm(scale=sigma).cdf)
        assert res.pvalue > 0.01


# ---------------------------------------------------------------------------
# offset sampling

def test_sample_offsets_shapes_and_support():
    rng = np.random.default_rng(1)
    per = gdc.sample_offsets(rng, gdc.GdcConfig(sigma=0.3))
    assert per.offsets.shape == (8, 2)
    assert (per.offsets >= 0).all()
    shared = gdc.sample_offsets(rng, gdc.GdcConfig(sigma=0.3, mode="shared", delta_base=2))
    assert shared.offsets.shape == (1, 2)


def test_sample_offsets_shared_sigma_zero_is_dilation_pattern():
    rng = np.random.default_rng(2)
    cfg = gdc.GdcConfig(sigma=0.0, mode="shared", delta_base=3.0)
    s = gdc.sample_offsets(rng, cfg)
    disp = s.displacements()
    assert disp[gdc.CENTER_INDEX].tolist() == [0, 0]
    np.testing.assert_array_equal(disp, 3 * gdc.direction_basis(3))


def test_sample_offsets_adaptive_scale():
    rng = np.random.default_rng(3)
    cfg = gdc.GdcConfig(sigma=0.2, adaptive_scale=True)
    s = gdc.sample_offsets(rng, cfg, image_short_side=100)
    assert s.scale == 100.0
    with pytest.raises(ValueError):
        gdc.sample_offsets(rng, cfg, image_short_side=None)
    s1 = gdc.sample_offsets(rng, gdc.GdcConfig(sigma=0.2))
    assert s1.scale == 1.0


def test_sample_offsets_tail_bound():
    # sigma 0.2, scale 100: P(pixel offset > 60) = 2*(1-Phi(3)) ~ 0.27%
    rng = np.random.default_rng(11)
    cfg = gdc.GdcConfig(sigma=0.2, adaptive_scale=True)
    vals = np.concatenate([
        (gdc.sample_offsets(rng, cfg, 100).scale
         * gdc.sample_offsets(rng, cfg, 100).offsets).ravel()
        for _ in range(2000)])
    assert (vals > 60).mean() < 0.005


def test_same_seed_same_sample_and_output():
    cfg = gdc.GdcConfig(sigma=0.4)
    a = gdc.draw_offsets(99, cfg)
    b = gdc.draw_offsets(99, cfg)
    np.testing.assert_array_equal(a.offsets, b.offsets)
    rng = np.random.default_rng(5)
    x = t64(rng.standard_normal((2, 6, 6)))
    k = t64(rng.standard_normal((2, 2, 3, 3)))
    out_a = gdc.gdc_forward(x, k, a).data
    out_b = gdc.gdc_forward(x, k, b).data
    np.testing.assert_array_equal(out_a, out_b)


def test_offset_sample_json_round_trip():
    cfg = gdc.GdcConfig(sigma=0.25, mode="shared", delta_base=4.0)
    s = gdc.draw_offsets(42, cfg)
    back = gdc.OffsetSample.from_json(s.to_json())
    np.testing.assert_array_equal(back.offsets, s.offsets)
    assert back.seed == 42
    assert back.delta_base == 4.0
    assert json.loads(s.to_json())["mode"] == "shared"


def test_offset_sample_validation():
    with pytest.raises(ValueError):
        gdc.OffsetSample(mode="per_direction", offsets=np.ones((3, 2)))
    with pytest.raises(ValueError):
        gdc.OffsetSample(mode="shared", offsets=-np.ones((1, 2)))
    with pytest.raises(ValueError):
        gdc.GdcConfig(sigma=-1.0)
    with pytest.raises(ValueError):
        gdc.GdcConfig(sigma=0.1, mode="per_direction", delta_base=2.0)


# ---------------------------------------------------------------------------
# tap geometry

def test_taps_unit_offsets_top_left():
    s = gdc.OffsetSample.pinned(1.0)
    taps = gdc.taps_for_position((5, 7), s, (20, 20))
    assert taps[0].tolist() == [4, 6]       # e = <-1,-1>
    assert taps[gdc.CENTER_INDEX].tolist() == [5, 7]
    assert taps[-1].tolist() == [6, 8]


def test_taps_center_direction_fixed():
    s = gdc.draw_offsets(3, gdc.GdcConfig(sigma=5.0))
    taps = gdc.taps_for_position((4, 4), s, (9, 9))
    assert taps[gdc.CENTER_INDEX].tolist() == [4, 4]


def test_taps_round_half_away_from_zero():
    s = gdc.OffsetSample(mode="per_direction",
                         offsets=np.tile([2.4, 3.6], (8, 1)))
    taps = gdc.taps_for_position((10, 10), s, (40, 40))
    # e = <1,0>: displacement rounds to (+2, 0)
    assert taps[7].tolist() == [12, 10]
    # e = <0,1>: displacement rounds to (0, +4)
    assert taps[5].tolist() == [10, 14]
    # halves go away from zero
    s2 = gdc.OffsetSample.pinned(2.5)
    taps2 = gdc.taps_for_position((10, 10), s2, (40, 40))
    assert taps2[0].tolist() == [7, 7]


def test_taps_clamped_to_bounds():
    s = gdc.OffsetSample.pinned(50.0)
    taps = gdc.taps_for_position((1, 1), s, (8, 8))
    assert taps.min() >= 0
    assert taps.max() <= 7


def test_taps_position_outside_bounds():
    s = gdc.OffsetSample.pinned(1.0)
    with pytest.raises(ValueError):
        gdc.taps_for_position((9, 0), s, (8, 8))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.0, 3.0), st.integers(4, 16))
def test_taps_always_in_bounds_property(seed, sigma, side):
    cfg = gdc.GdcConfig(sigma=sigma, adaptive_scale=True)
    s = gdc.sample_offsets(np.random.default_rng(seed), cfg, image_short_side=side)
    c = np.random.default_rng(seed + 1).integers(0, side, 2)
    taps = gdc.taps_for_position(tuple(c), s, (side, side))
    assert taps.min() >= 0 and taps[:, 0].max() < side and taps[:, 1].max() < side


# ---------------------------------------------------------------------------
# forward degeneracies

def test_pinned_unit_offsets_equal_conv_on_interior():
    # bit-exact against conv2d; conv2d itself is loop-oracle-checked elsewhere
    rng = np.random.default_rng(21)
    x = rng.standard_normal((4, 16, 16))
    k = rng.standard_normal((3, 4, 3, 3))
    got = gdc.gdc_forward(t64(x), t64(k), gdc.OffsetSample.pinned(1.0)).data
    want = T.conv2d(t64(x), t64(k), pad=1).data
    assert np.array_equal(got[:, 1:-1, 1:-1], want[:, 1:-1, 1:-1])
    loops = conv2d_loops(x, k, pad=1)
    assert np.abs(got[:, 1:-1, 1:-1] - loops[:, 1:-1, 1:-1]).max() < 1e-12


def test_shared_zero_offset_equals_dilated_conv_on_interior():
    rng = np.random.default_rng(22)
    x = rng.standard_normal((2, 20, 20))
    k = rng.standard_normal((2, 2, 3, 3))
    for d in (1, 2, 6):
        s = gdc.OffsetSample.pinned(0.0, mode="shared", delta_base=float(d))
        got = gdc.gdc_forward(t64(x), t64(k), s).data
        want = T.conv2d(t64(x), t64(k), pad=d, dilation=d).data
        assert np.array_equal(got[:, d:-d, d:-d], want[:, d:-d, d:-d])


def test_zero_kernel_zero_output():
    rng = np.random.default_rng(23)
    x = t64(rng.standard_normal((2, 8, 8)))
    s = gdc.draw_offsets(0, gdc.GdcConfig(sigma=1.0))
    out = gdc.gdc_forward(x, t64(np.zeros((3, 2, 3, 3))), s)
    assert (out.data == 0).all()


def test_forward_matches_taps_for_position():
    # vectorized forward agrees with the per-position tap contract
    rng = np.random.default_rng(24)
    x = rng.standard_normal((2, 7, 7))
    k = rng.standard_normal((1, 2, 3, 3))
    s = gdc.draw_offsets(5, gdc.GdcConfig(sigma=2.0))
    out = gdc.gdc_forward(t64(x), t64(k), s).data
    for c in ((0, 0), (3, 4), (6, 6)):
        taps = gdc.taps_for_position(c, s, (7, 7))
        want = sum(k[0, :, i // 3, i % 3] @ x[:, ty, tx]
                   for i, (ty, tx) in enumerate(taps))
        assert abs(out[0, c[0], c[1]] - want) < 1e-12


def test_shape_mismatch_errors():
    x = t64(np.ones((2, 5, 5)))
    s = gdc.OffsetSample.pinned(1.0)
    with pytest.raises(ValueError):
        gdc.gdc_forward(x, t64(np.ones((1, 3, 3, 3))), s)
    with pytest.raises(ValueError):
        gdc.gdc_depthwise(x, t64(np.ones((3, 1, 3, 3))), s)


# ---------------------------------------------------------------------------
# backward

@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gdc_backward_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = T.Tensor(rng.standard_normal((2, 5, 5)), dtype="f64", requires_grad=True)
    k = T.parameter(rng.standard_normal((2, 2, 3, 3)), dtype="f64", name="k")
    sample = gdc.draw_offsets(seed + 10, gdc.GdcConfig(sigma=1.5))
    check_op_gradients(lambda: T.tensor_sum(gdc.gdc_forward(x, k, sample)), [x, k])


def test_gdc_depthwise_backward_finite_differences():
    rng = np.random.default_rng(9)
    x = T.Tensor(rng.standard_normal((3, 5, 5)), dtype="f64", requires_grad=True)
    k = T.parameter(rng.standard_normal((3, 1, 3, 3)), dtype="f64", name="k")
    sample = gdc.draw_offsets(77, gdc.GdcConfig(sigma=1.0, mode="shared", delta_base=1.0))
    check_op_gradients(lambda: T.tensor_sum(gdc.gdc_depthwise(x, k, sample)), [x, k])


def test_zero_upstream_gradient_gives_zero_param_gradient():
    rng = np.random.default_rng(10)
    x = t64(rng.standard_normal((2, 6, 6)))
    k = T.parameter(rng.standard_normal((2, 2, 3, 3)), dtype="f64")
    out = gdc.gdc_forward(x, k, gdc.draw_offsets(1, gdc.GdcConfig(sigma=1.0)))
    out._backward(np.zeros_like(out.data))
    assert (k.grad == 0).all()


def test_center_weight_gradient_is_plain_correlation():
    # d loss / d kernel[o,c,1,1] with loss = sum(out) equals sum of input channel c
    rng = np.random.default_rng(12)
    x = t64(rng.standard_normal((2, 6, 6)))
    k = T.parameter(rng.standard_normal((1, 2, 3, 3)), dtype="f64")
    sample = gdc.draw_offsets(4, gdc.GdcConfig(sigma=3.0))
    T.backward(T.tensor_sum(gdc.gdc_forward(x, k, sample)))
    for c in range(2):
        assert abs(k.grad[0, c, 1, 1] - x.data[c].sum()) < 1e-10


# ---------------------------------------------------------------------------
# per-position sharing

def test_per_position_deterministic_and_differs_from_shared():
    rng = np.random.default_rng(13)
    x = t64(rng.standard_normal((2, 10, 10)))
    k = t64(rng.standard_normal((2, 2, 3, 3)))
    cfg = gdc.GdcConfig(sigma=1.5, sharing="per_position")
    s = gdc.draw_offsets(55, cfg)
    out1 = gdc.gdc_forward(x, k, s).data
    out2 = gdc.gdc_forward(x, k, s).data
    np.testing.assert_array_equal(out1, out2)
    s_fwd = gdc.OffsetSample(mode="per_direction", offsets=s.offsets, scale=s.scale,
                             sigma=s.sigma, sharing="per_forward", seed=s.seed)
    assert not np.array_equal(out1, gdc.gdc_forward(x, k, s_fwd).data)


def test_per_position_requires_seed():
    s = gdc.OffsetSample(mode="per_direction", offsets=np.ones((8, 2)),
                         sigma=1.0, sharing="per_position", seed=None)
    x = t64(np.ones((1, 4, 4)))
    k = t64(np.ones((1, 1, 3, 3)))
    with pytest.raises(ValueError):
        gdc.gdc_forward(x, k, s)


def test_per_position_backward_finite_differences():
    rng = np.random.default_rng(14)
    x = T.Tensor(rng.standard_normal((2, 4, 4)), dtype="f64", requires_grad=True)
    k = T.parameter(rng.standard_normal((1, 2, 3, 3)), dtype="f64")
    s = gdc.draw_offsets(8, gdc.GdcConfig(sigma=1.0, sharing="per_position"))
    check_op_gradients(lambda: T.tensor_sum(gdc.gdc_forward(x, k, s)), [x, k])


# ---------------------------------------------------------------------------
# spread monotonicity

def test_mean_tap_distance_increases_with_sigma():
    from gdcseg.experiments import mean_tap_radius
    radii = [mean_tap_radius(s, n=1000, seed=0) for s in (0.05, 0.1, 0.15, 0.2)]
    assert all(a < b for a, b in zip(radii, radii[1:])), radii
