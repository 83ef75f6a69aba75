import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from clarify_rank.nn_core import (
    IndexOutOfRange,
    LengthMismatch,
    MlpConfig,
    MlpModel,
    ShapeMismatch,
    StaleCache,
    backward,
    ce_loss,
    forward,
    mse_loss,
    softmax,
)

from gradcheck import kink_adjacent, max_relative_error, numeric_gradients, run_gradient_check


def small_model(input_dim=3, hidden=(4,), output_dim=1, seed=0, **kw):
    config = MlpConfig(input_dim=input_dim, hidden=hidden, output_dim=output_dim, **kw)
    return MlpModel(config, np.random.default_rng(seed))


# --- forward ----------------------------------------------------------------


def test_identity_network_passes_nonneg_input_through():
    model = small_model(input_dim=3, hidden=(3,), output_dim=3, use_batchnorm=False)
    model.params["h0.W"] = np.eye(3)
    model.params["out.W"] = np.eye(3)
    X = np.abs(np.random.default_rng(1).normal(size=(5, 3)))
    out, _ = forward(model, X)
    np.testing.assert_allclose(out, X)


def test_leaky_slope_on_negative_preactivation():
    model = small_model(input_dim=1, hidden=(1,), output_dim=1, use_batchnorm=False)
    model.params["h0.W"] = np.array([[1.0]])
    model.params["out.W"] = np.array([[1.0]])
    out, _ = forward(model, np.array([[-1.0]]))
    assert out[0, 0] == pytest.approx(-0.02)


def test_train_batchnorm_output_statistics():
    model = small_model(input_dim=4, hidden=(6,), output_dim=1, seed=3)
    gamma = np.random.default_rng(5).uniform(0.5, 2.0, size=6)
    beta = np.random.default_rng(6).normal(size=6)
    model.params["h0.gamma"] = gamma
    model.params["h0.beta"] = beta
    X = np.random.default_rng(7).normal(0, 2.0, size=(256, 4))
    _, cache = forward(model, X)
    bn_out = cache.blocks[0].pre_activation
    np.testing.assert_allclose(bn_out.mean(axis=0), beta, atol=1e-9)
    np.testing.assert_allclose(bn_out.var(axis=0), gamma**2, atol=1e-5)


def test_eval_output_independent_of_batch_composition():
    model = small_model(input_dim=3, hidden=(4, 3), output_dim=2, seed=11).eval()
    X = np.random.default_rng(2).normal(size=(6, 3))
    batch_out, _ = forward(model, X)
    row_outs = np.concatenate([forward(model, X[i : i + 1])[0] for i in range(6)])
    np.testing.assert_allclose(batch_out, row_outs)


def test_train_updates_running_stats_eval_does_not():
    model = small_model(input_dim=3, hidden=(4,), output_dim=1, seed=1)
    X = np.random.default_rng(3).normal(size=(8, 3))
    before = model.buffers["h0.running_mean"].copy()
    forward(model, X)
    after = model.buffers["h0.running_mean"].copy()
    assert not np.allclose(before, after)
    model.eval()
    forward(model, X)
    np.testing.assert_array_equal(model.buffers["h0.running_mean"], after)


def test_single_row_train_batch_uses_running_stats():
    model = small_model(input_dim=3, hidden=(4,), output_dim=1, seed=2)
    forward(model, np.random.default_rng(0).normal(size=(16, 3)))  # populate running stats
    x = np.random.default_rng(1).normal(size=(1, 3))
    out_train, cache = forward(model, x)
    assert not cache.blocks[0].used_batch_stats
    out_eval, _ = forward(model.eval(), x)
    np.testing.assert_allclose(out_train, out_eval)


def test_dropout_eval_is_identity():
    model = small_model(input_dim=3, hidden=(4,), output_dim=2, dropout_p=0.5, seed=4).eval()
    X = np.random.default_rng(5).normal(size=(5, 3))
    a, _ = forward(model, X)
    b, _ = forward(model, X)
    np.testing.assert_array_equal(a, b)


def test_forward_shape_mismatch():
    model = small_model(input_dim=3)
    with pytest.raises(ShapeMismatch):
        forward(model, np.zeros((4, 5)))


# --- losses -----------------------------------------------------------------


def test_mse_zero_when_equal():
    loss, grad = mse_loss(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
    assert loss == 0.0
    np.testing.assert_array_equal(grad, 0.0)


def test_mse_hand_value():
    loss, grad = mse_loss(np.array([0.0, 0.0]), np.array([1.0, 3.0]))
    assert loss == pytest.approx(5.0)
    np.testing.assert_allclose(grad, [-1.0, -3.0])


def test_mse_length_mismatch():
    with pytest.raises(LengthMismatch):
        mse_loss(np.zeros(3), np.zeros(4))


def test_ce_uniform_logits():
    loss, _ = ce_loss(np.zeros((4, 11)), np.array([0, 3, 7, 10]))
    assert loss == pytest.approx(math.log(11))
    loss2, _ = ce_loss(np.zeros((2, 2)), np.array([0, 1]))
    assert loss2 == pytest.approx(math.log(2))


def test_ce_extreme_logits_do_not_overflow():
    loss, grad = ce_loss(np.array([[1000.0, 0.0]]), np.array([0]))
    assert loss == pytest.approx(0.0, abs=1e-9)
    assert np.isfinite(grad).all()


def test_ce_bad_class_index():
    with pytest.raises(IndexOutOfRange):
        ce_loss(np.zeros((2, 3)), np.array([0, 3]))


def test_softmax_rows_sum_to_one():
    logits = np.random.default_rng(0).normal(scale=50, size=(20, 7))
    probs = softmax(logits)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


@given(
    arrays(np.float64, (8,), elements=st.floats(-100, 100)),
    arrays(np.float64, (8,), elements=st.floats(-100, 100)),
)
@settings(max_examples=50, deadline=None)
def test_mse_nonnegative(pred, target):
    loss, _ = mse_loss(pred, target)
    assert loss >= 0.0


@given(arrays(np.float64, (4, 5), elements=st.floats(-50, 50)), st.integers(0, 4))
@settings(max_examples=50, deadline=None)
def test_ce_nonnegative(logits, cls):
    loss, _ = ce_loss(logits, np.full(4, cls))
    assert loss >= 0.0


# --- backward ---------------------------------------------------------------


def test_zero_loss_grad_gives_zero_param_grads():
    model = small_model(input_dim=3, hidden=(4, 3), output_dim=2, seed=6)
    X = np.random.default_rng(8).normal(size=(5, 3))
    _, cache = forward(model, X)
    grads = backward(model, cache, np.zeros((5, 2)))
    for g in grads.values():
        np.testing.assert_array_equal(g, 0.0)


def test_stale_cache_rejected():
    model_a = small_model(seed=1)
    model_b = small_model(seed=2)
    X = np.zeros((2, 3))
    _, cache = forward(model_a, X)
    with pytest.raises(StaleCache):
        backward(model_b, cache, np.zeros((2, 1)))


def test_gradients_match_finite_differences_across_configs():
    rng = np.random.default_rng(20240)
    checked = 0
    attempts = 0
    while checked < 25:
        attempts += 1
        assert attempts < 400, "too many oracle-invalid configurations"
        err = run_gradient_check(rng)
        if err is None:
            continue
        assert err < 1e-4, f"max rel err {err}"
        checked += 1


def test_gradcheck_covers_batchnorm_both_paths():
    # explicit batchnorm-on config in train mode (batch-statistics path) and
    # eval mode (running-stats path)
    for train_mode in (True, False):
        model = small_model(input_dim=4, hidden=(5, 4), output_dim=3, seed=9)
        if not train_mode:
            model.eval()
        X = np.random.default_rng(10).normal(0, 2.0, size=(6, 4))
        y = np.array([0, 1, 2, 0, 1, 2])
        if kink_adjacent(model, X):
            X = X + 0.05  # deterministic nudge away from the kink
            assert not kink_adjacent(model, X)
        out, cache = forward(model, X)
        _, grad = ce_loss(out, y)
        analytic = backward(model, cache, grad)
        numeric = numeric_gradients(model, X, y, "ce")
        assert max_relative_error(analytic, numeric) < 1e-4
