import math

import numpy as np
import pytest

from smoothcam import (
    Model,
    NonConvLayerError,
    ParamError,
    ScoreMode,
    UnknownLayerError,
    UnsupportedError,
    conv_layer,
    dense_layer,
    finite_diff_input_grad,
    finite_diff_layer_grad,
    flatten_layer,
    forward,
    grad_wrt_input,
    grad_wrt_layer,
    higher_order_triple,
    maxpool_layer,
    softmax_layer,
)


def _sum_tail_net(rng, dense_scale=1.0):
    """conv -> flatten -> dense whose single row is all ones (scaled)."""
    layers = [
        conv_layer("conv1", rng.standard_normal((2, 1, 3, 3)), np.zeros(2)),
        flatten_layer("flatten1"),
        dense_layer("dense1", np.full((1, 2 * 6 * 6), dense_scale), np.zeros(1)),
    ]
    return Model(layers=layers, input_shape=(1, 8, 8), class_count=1)


def _relative_errors(analytic, estimate, floor=1e-6):
    mask = np.abs(analytic) > floor
    assert mask.any()
    return np.abs(analytic - estimate)[mask] / np.abs(analytic)[mask]


def test_sum_tail_gives_unit_gradient(rng):
    model = _sum_tail_net(rng)
    trace = forward(model, rng.random((1, 8, 8)))
    g = grad_wrt_layer(model, trace, ScoreMode("raw-logit", 0), "conv1")
    assert np.array_equal(g, np.ones((2, 6, 6)))


def test_zero_tail_gives_zero_gradient(rng):
    model = _sum_tail_net(rng, dense_scale=0.0)
    trace = forward(model, rng.random((1, 8, 8)))
    g = grad_wrt_layer(model, trace, ScoreMode("raw-logit", 0), "conv1")
    assert np.all(g == 0.0)


@pytest.mark.parametrize("mode", ["raw-logit", "exp-logit", "probability"])
def test_layer_gradient_matches_finite_differences(random_model, rng, mode):
    trace = forward(random_model, rng.random((1, 16, 16)))
    score = ScoreMode(mode, 3)
    g = grad_wrt_layer(random_model, trace, score, "conv1")
    fd = finite_diff_layer_grad(random_model, trace, score, "conv1", h=1e-4)
    assert _relative_errors(g, fd).max() < 1e-3


@pytest.mark.parametrize("mode", ["raw-logit", "exp-logit", "probability"])
def test_input_gradient_matches_finite_differences(random_model, rng, mode):
    x = rng.random((1, 16, 16))
    trace = forward(random_model, x)
    score = ScoreMode(mode, 5)
    g = grad_wrt_input(random_model, x, score)
    fd = finite_diff_input_grad(random_model, trace, score, h=1e-4)
    assert _relative_errors(g, fd).max() < 1e-3


def test_input_gradient_of_linear_model_is_weight_row(rng):
    w = rng.standard_normal((3, 12))
    layers = [
        flatten_layer("flatten1"),
        dense_layer("dense1", w, np.zeros(3)),
        softmax_layer("softmax1"),
    ]
    model = Model(layers=layers, input_shape=(3, 2, 2), class_count=3)
    x = rng.random((3, 2, 2))
    for c in range(3):
        g = grad_wrt_input(model, x, ScoreMode("raw-logit", c))
        assert np.max(np.abs(g - w[c].reshape(3, 2, 2))) < 1e-12


def test_input_gradient_zero_weights(rng):
    layers = [
        flatten_layer("flatten1"),
        dense_layer("dense1", np.zeros((2, 4)), np.zeros(2)),
    ]
    model = Model(layers=layers, input_shape=(1, 2, 2), class_count=2)
    g = grad_wrt_input(model, rng.random((1, 2, 2)), ScoreMode("raw-logit", 0))
    assert np.all(g == 0.0)


def test_gradient_through_pool_scatters_to_argmax(rng):
    layers = [
        conv_layer("conv1", np.ones((1, 1, 1, 1)), np.zeros(1)),
        maxpool_layer("pool1", 2),
        flatten_layer("flatten1"),
        dense_layer("dense1", np.ones((1, 4)), np.zeros(1)),
    ]
    model = Model(layers=layers, input_shape=(1, 4, 4), class_count=1)
    x = np.arange(16, dtype=float).reshape(1, 4, 4)
    trace = forward(model, x)
    g = grad_wrt_layer(model, trace, ScoreMode("raw-logit", 0), "conv1")
    want = np.zeros((1, 4, 4))
    want[0, 1::2, 1::2] = 1.0  # increasing values put every window max bottom-right
    assert np.array_equal(g, want)


# ---------------------------------------------------------------------------
# higher_order_triple
# ---------------------------------------------------------------------------


def test_triple_at_zero_logit_unit_gradient():
    t = higher_order_triple(np.ones((1, 2, 2)), 0.0, "exp-logit")
    assert np.all(t.d1 == 1.0) and np.all(t.d2 == 1.0) and np.all(t.d3 == 1.0)


def test_triple_zero_gradient():
    t = higher_order_triple(np.zeros((2, 3, 3)), 1.7, "exp-logit")
    assert np.all(t.d1 == 0.0) and np.all(t.d2 == 0.0) and np.all(t.d3 == 0.0)


def test_triple_direct_evaluation():
    g = np.full((1, 1, 1), 3.0)
    t = higher_order_triple(g, math.log(2.0), "exp-logit")
    assert t.d1[0, 0, 0] == pytest.approx(6.0, abs=1e-12)
    assert t.d2[0, 0, 0] == pytest.approx(18.0, abs=1e-12)
    assert t.d3[0, 0, 0] == pytest.approx(54.0, abs=1e-12)


def test_triple_raw_logit_mode(rng):
    g = rng.standard_normal((2, 2, 2))
    t = higher_order_triple(g, 5.0, "raw-logit")
    assert np.array_equal(t.d1, g)
    assert np.all(t.d2 == 0.0) and np.all(t.d3 == 0.0)


def test_triple_probability_mode_declined():
    with pytest.raises(UnsupportedError):
        higher_order_triple(np.ones((1, 1, 1)), 0.0, "probability")


def test_triple_algebraic_consistency(random_model, rng):
    trace = forward(random_model, rng.random((1, 16, 16)))
    g = grad_wrt_layer(random_model, trace, ScoreMode("raw-logit", 2), "conv1")
    t = higher_order_triple(g, float(trace.logits[2]), "exp-logit")
    assert np.max(np.abs(t.d2 * t.d1 - t.d1**2 * g)) < 1e-10
    assert np.max(np.abs(t.d3 - t.d1 * g * g)) < 1e-10


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------


def test_finite_diff_exact_on_linear_tail(rng):
    model = _sum_tail_net(rng)
    trace = forward(model, rng.random((1, 8, 8)))
    score = ScoreMode("raw-logit", 0)
    g = grad_wrt_layer(model, trace, score, "conv1")
    fd = finite_diff_layer_grad(model, trace, score, "conv1", h=1e-4)
    assert np.max(np.abs(g - fd)) < 1e-9


def test_finite_diff_second_order_convergence(random_model, rng):
    # With a smooth (softmax-score) tail the central difference error is O(h^2).
    trace = forward(random_model, rng.random((1, 16, 16)))
    score = ScoreMode("probability", 1)
    g = grad_wrt_layer(random_model, trace, score, "conv1")
    err_h = np.max(np.abs(finite_diff_layer_grad(random_model, trace, score, "conv1", h=1e-2) - g))
    err_h2 = np.max(np.abs(finite_diff_layer_grad(random_model, trace, score, "conv1", h=5e-3) - g))
    assert err_h2 < 0.5 * err_h


def test_finite_diff_zero_tail(rng):
    model = _sum_tail_net(rng, dense_scale=0.0)
    trace = forward(model, rng.random((1, 8, 8)))
    fd = finite_diff_layer_grad(model, trace, ScoreMode("raw-logit", 0), "conv1")
    assert np.all(fd == 0.0)


def test_finite_diff_rejects_bad_step(random_model, rng):
    trace = forward(random_model, rng.random((1, 16, 16)))
    with pytest.raises(ParamError):
        finite_diff_layer_grad(random_model, trace, ScoreMode("raw-logit", 0), "conv1", h=0.0)


# ---------------------------------------------------------------------------
# contracts
# ---------------------------------------------------------------------------


def test_gradient_linear_in_tail_weights(rng):
    x = rng.random((1, 8, 8))
    base = _sum_tail_net(rng, dense_scale=1.0)
    doubled = _sum_tail_net(rng, dense_scale=2.0)
    g1 = grad_wrt_layer(base, forward(base, x), ScoreMode("raw-logit", 0), "conv1")
    g2 = grad_wrt_layer(doubled, forward(doubled, x), ScoreMode("raw-logit", 0), "conv1")
    assert np.max(np.abs(g2 - 2.0 * g1)) < 1e-12


def test_unknown_layer(random_model, rng):
    trace = forward(random_model, rng.random((1, 16, 16)))
    with pytest.raises(UnknownLayerError):
        grad_wrt_layer(random_model, trace, ScoreMode("raw-logit", 0), "nosuch")


def test_non_conv_layer(random_model, rng):
    trace = forward(random_model, rng.random((1, 16, 16)))
    with pytest.raises(NonConvLayerError):
        grad_wrt_layer(random_model, trace, ScoreMode("raw-logit", 0), "pool1")


def test_class_index_out_of_range(random_model, rng):
    trace = forward(random_model, rng.random((1, 16, 16)))
    with pytest.raises(ParamError):
        grad_wrt_layer(random_model, trace, ScoreMode("raw-logit", 10), "conv1")


def test_score_mode_rejects_unknown_mode():
    with pytest.raises(ParamError):
        ScoreMode("squared-logit", 0)


def test_auto_class_resolves_to_argmax(random_model, rng):
    trace = forward(random_model, rng.random((1, 16, 16)))
    c = ScoreMode("raw-logit", None).resolve_class(trace, random_model.class_count)
    assert c == int(np.argmax(trace.logits))
