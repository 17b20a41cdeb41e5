"""Straight-pipeline model definition, shape validation, and a tracing forward pass.

Models are ordered lists of layers with no branches; that covers the VGG-style
nets this library targets and keeps the reverse sweep in `gradients` simple.
A model is immutable after construction (weight arrays are frozen), so any
number of concurrent forward passes over it is safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, UnknownLayerError
from .tensor import Tensor, as_tensor, conv2d, dense, maxpool2d, relu, softmax

LAYER_KINDS = ("conv", "relu", "maxpool", "flatten", "dense", "softmax")


@dataclass
class LayerSpec:
    """One pipeline stage; weight arrays are frozen once a Model owns them."""

    name: str
    kind: str
    kernels: np.ndarray | None = None  # conv: [K, C, kh, kw]
    weights: np.ndarray | None = None  # dense: [M, N]
    bias: np.ndarray | None = None     # conv: [K], dense: [M]
    stride: int = 1                    # conv, maxpool
    padding: int = 0                   # conv
    pool_size: int = 2                 # maxpool


def conv_layer(name: str, kernels, bias, stride: int = 1, padding: int = 0) -> LayerSpec:
    return LayerSpec(name, "conv", kernels=kernels, bias=bias, stride=stride, padding=padding)


def relu_layer(name: str) -> LayerSpec:
    return LayerSpec(name, "relu")


def maxpool_layer(name: str, size: int, stride: int | None = None) -> LayerSpec:
    return LayerSpec(name, "maxpool", pool_size=size, stride=size if stride is None else stride)


def flatten_layer(name: str) -> LayerSpec:
    return LayerSpec(name, "flatten")


def dense_layer(name: str, weights, bias) -> LayerSpec:
    return LayerSpec(name, "dense", weights=weights, bias=bias)


def softmax_layer(name: str) -> LayerSpec:
    return LayerSpec(name, "softmax")


@dataclass
class Model:
    """An ordered layer pipeline with a fixed [C,H,W] input shape.

    Construction freezes all weight arrays (private float64 copies, marked
    read-only) and runs shape inference end to end, so an invalid topology
    fails here rather than mid-forward.
    """

    layers: list[LayerSpec]
    input_shape: tuple[int, int, int]
    class_count: int

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        self.class_count = int(self.class_count)
        for spec in self.layers:
            for attr in ("kernels", "weights", "bias"):
                arr = getattr(spec, attr)
                if arr is not None:
                    frozen = np.array(arr, dtype=np.float64, order="C")
                    frozen.flags.writeable = False
                    setattr(spec, attr, frozen)
        self._shapes = _infer_shapes(self)

    def layer_index(self, name: str) -> int:
        for i, spec in enumerate(self.layers):
            if spec.name == name:
                return i
        raise UnknownLayerError(f"unknown layer: {name}")

    def layer(self, name: str) -> LayerSpec:
        return self.layers[self.layer_index(name)]


@dataclass
class ActivationTrace:
    """Every layer's forward output plus the bookkeeping reverse sweeps need."""

    input: np.ndarray
    per_layer: dict[str, np.ndarray]
    logits: np.ndarray
    probabilities: np.ndarray
    pool_argmax: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


def validate(model: Model) -> dict[str, tuple[int, ...]]:
    """Infer every layer's output shape, raising ShapeError on the first bad layer."""
    return _infer_shapes(model)


def forward(model: Model, input: Tensor) -> ActivationTrace:
    """Run the pipeline, recording every layer's output and pool argmax choices."""
    x = as_tensor(input)
    if x.shape != model.input_shape:
        raise ShapeError(f"input shape {x.shape} does not match model input {model.input_shape}")
    per_layer: dict[str, np.ndarray] = {}
    pool_argmax: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    out = x
    for spec in model.layers:
        if spec.kind == "conv":
            out = conv2d(out, spec.kernels, spec.bias, spec.stride, spec.padding)
        elif spec.kind == "relu":
            out = relu(out)
        elif spec.kind == "maxpool":
            out, idx = maxpool2d(out, spec.pool_size, spec.stride)
            pool_argmax[spec.name] = idx
        elif spec.kind == "flatten":
            out = out.reshape(-1)
        elif spec.kind == "dense":
            out = dense(out, spec.weights, spec.bias)
        elif spec.kind == "softmax":
            out = softmax(out)
        else:
            raise ShapeError(f"layer '{spec.name}': unknown kind '{spec.kind}'")
        per_layer[spec.name] = out
    tap = logits_layer_index(model)
    logits = per_layer[model.layers[tap].name] if tap >= 0 else x
    return ActivationTrace(
        input=x,
        per_layer=per_layer,
        logits=logits,
        probabilities=softmax(logits),
        pool_argmax=pool_argmax,
    )


def list_conv_layers(model: Model) -> list[str]:
    """Names of all convolution layers in forward order."""
    return [spec.name for spec in model.layers if spec.kind == "conv"]


def logits_layer_index(model: Model) -> int:
    """Index of the layer producing the class scores (the final softmax's input)."""
    if model.layers[-1].kind == "softmax":
        return len(model.layers) - 2
    return len(model.layers) - 1


def _infer_shapes(model: Model) -> dict[str, tuple[int, ...]]:
    if not model.layers:
        raise ShapeError("model has no layers")
    seen: set[str] = set()
    for spec in model.layers:
        if spec.name in seen:
            raise ShapeError(f"duplicate layer name: {spec.name}")
        seen.add(spec.name)
    shape = tuple(model.input_shape)
    if len(shape) != 3 or any(d < 1 for d in shape):
        raise ShapeError(f"input shape must be [C,H,W] with positive dims, got {shape}")
    table: dict[str, tuple[int, ...]] = {}
    for spec in model.layers:
        shape = _layer_output_shape(spec, shape)
        table[spec.name] = shape
    if shape != (model.class_count,):
        raise ShapeError(
            f"final layer '{model.layers[-1].name}' produces shape {shape}, "
            f"expected ({model.class_count},)"
        )
    return table


def _layer_output_shape(spec: LayerSpec, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    name = spec.name
    if spec.kind == "conv":
        if len(in_shape) != 3:
            raise ShapeError(f"layer '{name}': conv needs a [C,H,W] input, got {in_shape}")
        if spec.kernels is None or spec.kernels.ndim != 4:
            raise ShapeError(f"layer '{name}': conv requires [K,C,kh,kw] kernels")
        c, h, w = in_shape
        kout, kc, kh, kw = spec.kernels.shape
        if kc != c:
            raise ShapeError(f"layer '{name}': kernel channels {kc} != input channels {c}")
        ph, pw = h + 2 * spec.padding, w + 2 * spec.padding
        if kh > ph or kw > pw:
            raise ShapeError(f"layer '{name}': kernel {kh}x{kw} exceeds padded input {ph}x{pw}")
        if (ph - kh) % spec.stride or (pw - kw) % spec.stride:
            raise ShapeError(f"layer '{name}': non-integral output size")
        return (kout, (ph - kh) // spec.stride + 1, (pw - kw) // spec.stride + 1)
    if spec.kind == "relu":
        return in_shape
    if spec.kind == "maxpool":
        if len(in_shape) != 3:
            raise ShapeError(f"layer '{name}': maxpool needs a [C,H,W] input, got {in_shape}")
        c, h, w = in_shape
        if h < spec.pool_size or w < spec.pool_size:
            raise ShapeError(f"layer '{name}': pool window {spec.pool_size} exceeds input {h}x{w}")
        return (
            c,
            (h - spec.pool_size) // spec.stride + 1,
            (w - spec.pool_size) // spec.stride + 1,
        )
    if spec.kind == "flatten":
        return (int(np.prod(in_shape)),)
    if spec.kind == "dense":
        if spec.weights is None or spec.weights.ndim != 2:
            raise ShapeError(f"layer '{name}': dense requires [M,N] weights")
        m, n = spec.weights.shape
        if in_shape != (n,):
            raise ShapeError(f"layer '{name}': dense expects {n} inputs, got {in_shape}")
        return (m,)
    if spec.kind == "softmax":
        if len(in_shape) != 1:
            raise ShapeError(f"layer '{name}': softmax needs a vector input, got {in_shape}")
        return in_shape
    raise ShapeError(f"layer '{name}': unknown kind '{spec.kind}'")
