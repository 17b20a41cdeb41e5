"""Reverse-mode gradients of a class score through a recorded forward pass.

The post-convolution tail of these pipelines is piecewise linear: ReLU gates
and pool argmax choices are the only nonlinearity, and both are recorded in
the trace. A single reverse sweep that reads those gates therefore gives exact
derivatives of the raw logit, and the higher-order stacks for the exponential
score follow in closed form as powers of the first-order sweep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonConvLayerError, ParamError, UnsupportedError
from .network import ActivationTrace, Model, logits_layer_index
from .tensor import Tensor, as_tensor, conv2d, softmax

SCORE_MODES = ("raw-logit", "exp-logit", "probability")


@dataclass(frozen=True)
class ScoreMode:
    """Which scalar score to differentiate, and for which class.

    class_index=None means "use the argmax class of the un-noised pass".
    """

    mode: str = "exp-logit"
    class_index: int | None = None

    def __post_init__(self):
        if self.mode not in SCORE_MODES:
            raise ParamError(f"unknown score mode '{self.mode}', expected one of {SCORE_MODES}")

    def resolve_class(self, trace: ActivationTrace, class_count: int) -> int:
        if self.class_index is None:
            return int(np.argmax(trace.probabilities))
        c = int(self.class_index)
        if not 0 <= c < class_count:
            raise ParamError(f"class index {c} out of range [0, {class_count})")
        return c


@dataclass(frozen=True)
class GradientTriple:
    """First, second, and third derivative stacks over one [K,h,w] activation stack."""

    d1: np.ndarray
    d2: np.ndarray
    d3: np.ndarray


def grad_wrt_layer(model: Model, trace: ActivationTrace, score: ScoreMode, layer: str) -> Tensor:
    """Gradient of the class score with respect to a conv layer's [K,h,w] output.

    ReLU gates and pool argmax choices are read from the trace, so the sweep
    differentiates exactly the locally linear branch the forward pass took.
    The ReLU derivative at exactly 0 is taken as 0.
    """
    idx = _conv_index(model, layer)
    return _sweep(model, trace, score, stop_index=idx)


def grad_wrt_input(model: Model, input: Tensor, score: ScoreMode) -> Tensor:
    """Gradient of the class score with respect to the input (a sensitivity map)."""
    from .network import forward

    trace = forward(model, input)
    return _sweep(model, trace, score, stop_index=-1)


def higher_order_triple(g: Tensor, logit: float, mode: str | ScoreMode = "exp-logit") -> GradientTriple:
    """Derivative stacks for the chosen score, given the raw-logit gradient g.

    The logit s is piecewise linear in the activations, so for the exponential
    score y = exp(s) the chain rule collapses to elementwise powers:
    d1 = exp(s)*g, d2 = exp(s)*g^2, d3 = exp(s)*g^3. For the raw logit the
    higher orders vanish. Probability scores have no such closed form here and
    are declined.
    """
    mode_name = mode.mode if isinstance(mode, ScoreMode) else mode
    if mode_name not in SCORE_MODES:
        raise ParamError(f"unknown score mode '{mode_name}'")
    if mode_name == "probability":
        raise UnsupportedError("higher-order stacks are not supported for probability scores")
    g = as_tensor(g)
    if mode_name == "raw-logit":
        return GradientTriple(g.copy(), np.zeros_like(g), np.zeros_like(g))
    d1 = np.exp(float(logit)) * g
    return GradientTriple(d1, d1 * g, d1 * g * g)


def finite_diff_layer_grad(
    model: Model,
    trace: ActivationTrace,
    score: ScoreMode,
    layer: str,
    h: float = 1e-4,
) -> Tensor:
    """Central-difference estimate of the score gradient at a conv layer's output.

    ReLU gates and pool argmax choices stay pinned to their recorded states,
    so the difference probes the same locally linear branch the reverse sweep
    differentiates instead of stepping across a kink.
    """
    if h <= 0:
        raise ParamError(f"step h must be > 0, got {h}")
    idx = _conv_index(model, layer)
    base = trace.per_layer[layer]
    return _central_diff(model, trace, score, idx, base, h)


def finite_diff_input_grad(
    model: Model,
    trace: ActivationTrace,
    score: ScoreMode,
    h: float = 1e-4,
) -> Tensor:
    """Frozen-gate central-difference estimate of the input sensitivity map."""
    if h <= 0:
        raise ParamError(f"step h must be > 0, got {h}")
    return _central_diff(model, trace, score, -1, trace.input, h)


def _central_diff(model, trace, score, start_index, base, h):
    c = score.resolve_class(trace, model.class_count)
    work = base.copy()
    flat = work.reshape(-1)
    out = np.zeros_like(work)
    out_flat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = _frozen_score(model, trace, start_index, work, score.mode, c)
        flat[i] = orig - h
        f_minus = _frozen_score(model, trace, start_index, work, score.mode, c)
        flat[i] = orig
        out_flat[i] = (f_plus - f_minus) / (2.0 * h)
    return out


def _frozen_score(model, trace, start_index, value, mode, class_index):
    logits = _frozen_tail_logits(model, trace, start_index, value)
    if mode == "raw-logit":
        return float(logits[class_index])
    if mode == "exp-logit":
        return float(np.exp(logits[class_index]))
    return float(softmax(logits)[class_index])


def _frozen_tail_logits(model, trace, start_index, value):
    """Replay layers after start_index with ReLU gates and pool argmaxes frozen."""
    inputs = _layer_inputs(model, trace)
    tap = logits_layer_index(model)
    x = value
    for i in range(start_index + 1, tap + 1):
        spec = model.layers[i]
        if spec.kind == "conv":
            x = conv2d(x, spec.kernels, spec.bias, spec.stride, spec.padding)
        elif spec.kind == "relu":
            x = x * (inputs[i] > 0)
        elif spec.kind == "maxpool":
            rows, cols = trace.pool_argmax[spec.name]
            chan = np.arange(x.shape[0])[:, None, None]
            x = x[chan, rows, cols]
        elif spec.kind == "flatten":
            x = x.reshape(-1)
        elif spec.kind == "dense":
            x = spec.weights @ x + spec.bias
        elif spec.kind == "softmax":
            x = softmax(x)
    return x


def _conv_index(model: Model, layer: str) -> int:
    idx = model.layer_index(layer)
    kind = model.layers[idx].kind
    if kind != "conv":
        raise NonConvLayerError(f"layer '{layer}' has kind '{kind}', expected conv")
    return idx


def _layer_inputs(model: Model, trace: ActivationTrace) -> list[np.ndarray]:
    inputs = [trace.input]
    for spec in model.layers[:-1]:
        inputs.append(trace.per_layer[spec.name])
    return inputs


def _seed_at_logits(model: Model, trace: ActivationTrace, score: ScoreMode) -> np.ndarray:
    c = score.resolve_class(trace, model.class_count)
    logits = trace.logits
    if score.mode == "probability":
        p = trace.probabilities
        seed = -p[c] * p
        seed[c] += p[c]
        return seed
    seed = np.zeros_like(logits)
    seed[c] = 1.0 if score.mode == "raw-logit" else np.exp(logits[c])
    return seed


def _sweep(model: Model, trace: ActivationTrace, score: ScoreMode, stop_index: int) -> np.ndarray:
    g = _seed_at_logits(model, trace, score)
    inputs = _layer_inputs(model, trace)
    tap = logits_layer_index(model)
    for i in range(tap, stop_index, -1):
        g = _backward_layer(model.layers[i], g, inputs[i], trace)
    return g


def _backward_layer(spec, grad, layer_input, trace):
    if spec.kind == "conv":
        return _conv_input_grad(grad, spec, layer_input.shape)
    if spec.kind == "relu":
        return grad * (layer_input > 0)
    if spec.kind == "maxpool":
        rows, cols = trace.pool_argmax[spec.name]
        chan = np.broadcast_to(np.arange(grad.shape[0])[:, None, None], grad.shape)
        out = np.zeros_like(layer_input)
        np.add.at(out, (chan, rows, cols), grad)
        return out
    if spec.kind == "flatten":
        return grad.reshape(layer_input.shape)
    if spec.kind == "dense":
        return spec.weights.T @ grad
    # softmax: ds_j/dz_i = s_j (delta_ij - s_i)
    s = trace.per_layer[spec.name]
    return s * (grad - np.dot(grad, s))


def _conv_input_grad(grad, spec, input_shape):
    k = spec.kernels
    _, _, kh, kw = k.shape
    c, h, w = input_shape
    s, p = spec.stride, spec.padding
    hh, ww = grad.shape[1], grad.shape[2]
    dx = np.zeros((c, h + 2 * p, w + 2 * p))
    for u in range(kh):
        for v in range(kw):
            dx[:, u : u + s * hh : s, v : v + s * ww : s] += np.einsum(
                "khw,kc->chw", grad, k[:, :, u, v]
            )
    return dx[:, p : p + h, p : p + w] if p else dx
