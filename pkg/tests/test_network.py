import numpy as np
import pytest

from smoothcam import (
    Model,
    ShapeError,
    conv_layer,
    dense_layer,
    flatten_layer,
    forward,
    list_conv_layers,
    maxpool_layer,
    relu_layer,
    softmax_layer,
    validate,
)


def test_validate_fixture_shape_table(random_model):
    table = validate(random_model)
    assert table == {
        "conv1": (4, 14, 14),
        "relu1": (4, 14, 14),
        "pool1": (4, 7, 7),
        "flatten1": (196,),
        "dense1": (10,),
        "softmax1": (10,),
    }


def test_dense_size_mismatch_names_layer(rng):
    layers = [
        conv_layer("conv1", rng.standard_normal((4, 1, 3, 3)), np.zeros(4)),
        relu_layer("relu1"),
        maxpool_layer("pool1", 2),
        flatten_layer("flatten1"),
        dense_layer("dense1", rng.standard_normal((10, 200)), np.zeros(10)),
        softmax_layer("softmax1"),
    ]
    with pytest.raises(ShapeError, match="dense1"):
        Model(layers=layers, input_shape=(1, 16, 16), class_count=10)


def test_empty_layer_list_rejected():
    with pytest.raises(ShapeError):
        Model(layers=[], input_shape=(1, 4, 4), class_count=2)


def test_duplicate_layer_names_rejected():
    layers = [flatten_layer("a"), dense_layer("a", np.ones((2, 4)), np.zeros(2))]
    with pytest.raises(ShapeError, match="duplicate"):
        Model(layers=layers, input_shape=(1, 2, 2), class_count=2)


def test_wrong_class_count_rejected():
    layers = [flatten_layer("f"), dense_layer("d", np.ones((3, 4)), np.zeros(3))]
    with pytest.raises(ShapeError):
        Model(layers=layers, input_shape=(1, 2, 2), class_count=5)


def _two_layer_net():
    # 1x1 conv with weight 2, then a dense layer that sums every entry.
    layers = [
        conv_layer("conv1", np.full((1, 1, 1, 1), 2.0), np.zeros(1)),
        flatten_layer("flatten1"),
        dense_layer("dense1", np.ones((1, 4)), np.zeros(1)),
    ]
    return Model(layers=layers, input_shape=(1, 2, 2), class_count=1)


def test_forward_hand_computed_logit():
    model = _two_layer_net()
    trace = forward(model, np.ones((1, 2, 2)))
    assert trace.logits.shape == (1,)
    assert trace.logits[0] == pytest.approx(8.0, abs=1e-12)


def test_forward_probabilities_sum_to_one(random_model, rng):
    trace = forward(random_model, rng.random((1, 16, 16)))
    assert abs(trace.probabilities.sum() - 1.0) < 1e-12


def test_forward_trace_covers_every_layer(random_model, rng):
    trace = forward(random_model, rng.random((1, 16, 16)))
    assert set(trace.per_layer) == {spec.name for spec in random_model.layers}


def test_forward_is_deterministic(random_model, rng):
    x = rng.random((1, 16, 16))
    a = forward(random_model, x)
    b = forward(random_model, x)
    for name in a.per_layer:
        assert np.array_equal(a.per_layer[name], b.per_layer[name])
    assert np.array_equal(a.logits, b.logits)
    assert np.array_equal(a.probabilities, b.probabilities)


def test_forward_shapes_match_validate(random_model, rng):
    table = validate(random_model)
    trace = forward(random_model, rng.random((1, 16, 16)))
    for name, shape in table.items():
        assert trace.per_layer[name].shape == shape


def test_forward_rejects_wrong_input_shape(random_model):
    with pytest.raises(ShapeError):
        forward(random_model, np.zeros((1, 8, 8)))


def test_list_conv_layers_fixture(random_model):
    assert list_conv_layers(random_model) == ["conv1"]


def test_list_conv_layers_two_convs(rng):
    layers = [
        conv_layer("conv1", rng.standard_normal((2, 1, 3, 3)), np.zeros(2)),
        conv_layer("conv2", rng.standard_normal((3, 2, 3, 3)), np.zeros(3)),
        flatten_layer("flatten1"),
        dense_layer("dense1", rng.standard_normal((2, 3 * 12 * 12)), np.zeros(2)),
        softmax_layer("softmax1"),
    ]
    model = Model(layers=layers, input_shape=(1, 16, 16), class_count=2)
    assert list_conv_layers(model) == ["conv1", "conv2"]


def test_list_conv_layers_none():
    layers = [
        flatten_layer("flatten1"),
        dense_layer("dense1", np.ones((2, 4)), np.zeros(2)),
        softmax_layer("softmax1"),
    ]
    model = Model(layers=layers, input_shape=(1, 2, 2), class_count=2)
    assert list_conv_layers(model) == []


def test_model_weights_are_frozen(random_model):
    conv = random_model.layer("conv1")
    with pytest.raises(ValueError):
        conv.kernels[0, 0, 0, 0] = 99.0
