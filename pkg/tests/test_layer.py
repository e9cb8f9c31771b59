from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import dict_gradcheck
from wavefield.dynamics import RolloutOverflowError, ShapeError
from wavefield.layer import (
    LayerParams,
    StaleTapeError,
    inverse_softplus,
    medium_from_hidden,
    softplus,
    wave_layer_backward,
    wave_layer_forward,
)

finite = st.floats(-50, 50, allow_nan=False, allow_subnormal=False)


def params(d, steps=4, seed=0, v0_mode="zero", **kw):
    return LayerParams.init(d, steps, np.random.default_rng(seed), v0_mode=v0_mode, **kw)


# ---- softplus

def test_softplus_values():
    assert softplus(0.0) == pytest.approx(np.log(2), rel=1e-15)
    assert softplus(50.0) == pytest.approx(50.0, rel=1e-15)
    assert np.isfinite(softplus(1000.0)) and softplus(1000.0) == 1000.0


def test_softplus_deep_negative_against_high_precision():
    getcontext().prec = 50
    exact = (1 + Decimal(-50).exp()).ln()
    assert softplus(-50.0) == pytest.approx(float(exact), rel=1e-14)
    assert softplus(-50.0) > 0


@given(finite, finite)
def test_softplus_positive_and_monotone(a, b):
    lo, hi = sorted((a, b))
    assert softplus(lo) > 0
    assert softplus(lo) <= softplus(hi)


@given(st.floats(1e-6, 40))
def test_inverse_softplus_round_trip(y):
    assert softplus(inverse_softplus(y)) == pytest.approx(y, rel=1e-10)


# ---- medium_from_hidden

def test_zero_weights_give_ln2_everywhere(rng):
    p = params(3)
    p.w_c[:] = 0.0
    p.b_c = 0.0
    m = medium_from_hidden(rng.normal(size=(10, 3)), p)
    np.testing.assert_allclose(m.c, np.log(2), rtol=1e-15)


def test_one_hot_channel_selects_speed():
    n, d = 8, 3
    H = np.zeros((n, d))
    H[::2, 1] = 1.0
    p = params(d)
    p.w_c[:] = 0.0
    p.w_c[1] = 10.0
    p.b_c = -5.0
    m = medium_from_hidden(H, p)
    lo, hi = np.log1p(np.exp(-5.0)), 5.0 + np.log1p(np.exp(-5.0))
    np.testing.assert_allclose(m.c[::2], hi, rtol=1e-14)
    np.testing.assert_allclose(m.c[1::2], lo, rtol=1e-14)
    assert m.c[1] == pytest.approx(6.7153e-3, rel=1e-4)
    assert m.c[0] == pytest.approx(5.0067, rel=1e-4)


@given(arrays(np.float64, (6, 3), elements=finite), arrays(np.float64, 3, elements=finite), finite, finite)
def test_medium_is_always_positive(H, w, b_c, b_g):
    p = LayerParams(w, b_c, -w, b_g, 0.0, 1)
    m = medium_from_hidden(H, p)
    assert m.c.min() > 0 and m.gamma.min() > 0
    assert m.c.shape == (6,)


def test_medium_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        medium_from_hidden(rng.normal(size=(8, 4)), params(3))


# ---- forward

def test_zero_steps_is_exact_identity(rng):
    H = rng.normal(size=(16, 5))
    out, _ = wave_layer_forward(H, params(5, steps=0))
    np.testing.assert_array_equal(out, H)


def test_vanishing_speed_is_near_identity(rng):
    H = rng.normal(size=(32, 4))
    p = params(4, steps=8)
    p.w_c[:] = 0.0
    p.b_c = -30.0
    out, _ = wave_layer_forward(H, p)
    np.testing.assert_allclose(out, H, atol=1e-6)


@pytest.mark.parametrize("steps", [0, 1, 3])
def test_shape_preserved(steps, rng):
    out, _ = wave_layer_forward(rng.normal(size=(128, 32)), params(32, steps))
    assert out.shape == (128, 32)


def test_batched_forward_matches_per_example(rng):
    H = rng.normal(size=(3, 16, 4))
    p = params(4, steps=3, v0_mode="linear")
    out, _ = wave_layer_forward(H, p)
    for b in range(3):
        np.testing.assert_allclose(out[b], wave_layer_forward(H[b], p)[0], rtol=1e-13, atol=1e-13)


@given(st.integers(0, 2**32 - 1), st.integers(1, 15))
@settings(max_examples=20, deadline=None)
def test_translation_equivariance(seed, shift):
    rng = np.random.default_rng(seed)
    H = rng.normal(size=(16, 3))
    p = params(3, steps=4, seed=seed % 97, weight_scale=1.0)
    out, _ = wave_layer_forward(H, p)
    shifted, _ = wave_layer_forward(np.roll(H, shift, axis=0), p)
    np.testing.assert_allclose(shifted, np.roll(out, shift, axis=0), atol=1e-10)


def test_frozen_medium_makes_channels_independent(rng):
    H = rng.normal(size=(16, 4))
    p = params(4, steps=5)
    p.w_c[:] = 0.0
    p.w_g[:] = 0.0
    out, _ = wave_layer_forward(H, p)
    H2 = H.copy()
    H2[:, 1] = 0.0
    out2, _ = wave_layer_forward(H2, p)
    np.testing.assert_array_equal(np.delete(out2, 1, axis=1), np.delete(out, 1, axis=1))


def test_zeroing_a_channel_reaches_others_only_through_medium(rng):
    H = rng.normal(size=(16, 4))
    p = params(4, steps=5, weight_scale=1.0)
    H2 = H.copy()
    H2[:, 1] = 0.0
    changed = wave_layer_forward(H2, p)[0][:, 0] - wave_layer_forward(H, p)[0][:, 0]
    assert np.abs(changed).max() > 0


def test_overflow_reports_channel_and_step(rng):
    H = rng.normal(size=(16, 6))
    p = params(6, steps=400)
    p.w_c[:] = 0.0
    p.b_c = inverse_softplus(5.0)
    p.dt_raw = inverse_softplus(1.0)
    with pytest.raises(RolloutOverflowError) as info:
        wave_layer_forward(H, p)
    assert info.value.step >= 1 and 0 <= info.value.channel < 6


def test_params_validation():
    with pytest.raises(ValueError):
        LayerParams(np.zeros(3), 0.0, np.zeros(3), 0.0, 0.0, 2, "linear")
    with pytest.raises(ValueError):
        LayerParams(np.zeros(3), 0.0, np.zeros(3), 0.0, 0.0, 2, "zero", np.zeros((3, 3)))
    with pytest.raises(ShapeError):
        LayerParams(np.zeros(3), 0.0, np.zeros(2), 0.0, 0.0, 2)
    assert params(3).dt == pytest.approx(0.05)


# ---- backward

def test_zero_steps_backward(rng):
    H, g = rng.normal(size=(8, 3)), rng.normal(size=(8, 3))
    p = params(3, steps=0)
    _, tape = wave_layer_forward(H, p)
    grads = wave_layer_backward(tape, g)
    np.testing.assert_array_equal(grads.d_input, g)
    assert all(not np.any(v) for v in grads.arrays().values())


def test_zero_cotangent_backward(rng):
    p = params(3, steps=4, v0_mode="linear")
    _, tape = wave_layer_forward(rng.normal(size=(8, 3)), p)
    grads = wave_layer_backward(tape, np.zeros((8, 3)))
    assert not np.any(grads.d_input)
    assert all(not np.any(v) for v in grads.arrays().values())


def test_stale_tape_rejected(rng):
    p = params(3)
    _, tape = wave_layer_forward(rng.normal(size=(8, 3)), p)
    p.w_c[0] += 1.0
    with pytest.raises(StaleTapeError):
        wave_layer_backward(tape, np.ones((8, 3)))
    other = params(3, seed=5)
    _, tape = wave_layer_forward(rng.normal(size=(8, 3)), params(3))
    with pytest.raises(StaleTapeError):
        wave_layer_backward(tape, np.ones((8, 3)), params=other)


def test_backward_shape_mismatch(rng):
    _, tape = wave_layer_forward(rng.normal(size=(8, 3)), params(3))
    with pytest.raises(ShapeError):
        wave_layer_backward(tape, np.ones((8, 4)))


def layer_fd_error(v0_mode, seed=0, eps=1e-5, batch=()):
    rng = np.random.default_rng(seed)
    n, d, k = 16, 4, 4
    H = rng.normal(size=batch + (n, d))
    W = rng.normal(size=batch + (n, d))
    p = params(d, steps=k, seed=seed, v0_mode=v0_mode, weight_scale=1.0, dt0=0.3)
    point = dict(p.arrays(), H=H)

    def loss(x):
        q = LayerParams.from_arrays(x, k, v0_mode)
        return float(np.sum(W * wave_layer_forward(x["H"], q)[0]))

    _, tape = wave_layer_forward(H, p)
    g = wave_layer_backward(tape, W)
    return dict_gradcheck(loss, point, dict(g.arrays(), H=g.d_input), eps)


@pytest.mark.parametrize("v0_mode", ["zero", "linear"])
def test_layer_matches_finite_differences(v0_mode):
    assert layer_fd_error(v0_mode) <= 1e-5


def test_batched_layer_matches_finite_differences():
    assert layer_fd_error("linear", seed=3, batch=(2,)) <= 1e-5
