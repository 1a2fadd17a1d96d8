"""From-scratch multilayer perceptron trained with SGD + momentum.

All arithmetic is float64 and every reduction runs in a fixed order, so
the same (spec, seed, data, config) reproduces identical bits. State
objects are treated as values: :func:`sgd_step` returns fresh arrays and
never mutates its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .losses import DimensionMismatch, LossKind, as_loss_kind, batch_mean_gradient, batch_mean_loss
from .rng import Xoshiro256

HIDDEN_ACTIVATIONS = ("identity", "relu", "sigmoid", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "softmax")


class InvalidSpec(ValueError):
    pass


class LossActivationMismatch(ValueError):
    pass


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]
    output_activation: str = "softmax"
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.layer_sizes) < 2 or any(s < 1 for s in self.layer_sizes):
            raise InvalidSpec(f"need >= 2 positive layer sizes, got {self.layer_sizes}")
        if len(self.activations) != len(self.layer_sizes) - 2:
            raise InvalidSpec(
                f"{len(self.layer_sizes) - 2} hidden layers but {len(self.activations)} activations"
            )
        bad = [a for a in self.activations if a not in HIDDEN_ACTIVATIONS]
        if bad:
            raise InvalidSpec(f"unknown hidden activation(s) {bad}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise InvalidSpec(f"unknown output activation {self.output_activation!r}")
        if not 0 <= self.init_seed < 2**64:
            raise InvalidSpec("init_seed must be an unsigned 64-bit integer")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1


@dataclass
class ModelState:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    spec: ModelSpec

    def copy(self) -> "ModelState":
        return ModelState([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.spec)

    def bitwise_equal(self, other: "ModelState") -> bool:
        return self.spec == other.spec and _same_bits(self.weights, other.weights) and _same_bits(
            self.biases, other.biases
        )


@dataclass
class OptimizerState:
    weight_velocity: list[np.ndarray]
    bias_velocity: list[np.ndarray]
    step_count: int = 0

    def copy(self) -> "OptimizerState":
        return OptimizerState(
            [v.copy() for v in self.weight_velocity], [v.copy() for v in self.bias_velocity], self.step_count
        )

    def bitwise_equal(self, other: "OptimizerState") -> bool:
        return (
            self.step_count == other.step_count
            and _same_bits(self.weight_velocity, other.weight_velocity)
            and _same_bits(self.bias_velocity, other.bias_velocity)
        )


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float
    momentum: float = 0.0
    loss: LossKind = field(default_factory=lambda: LossKind("cross_entropy"))

    def __post_init__(self):
        object.__setattr__(self, "loss", as_loss_kind(self.loss))
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum!r}")


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class Trace:
    """Per-layer pre-activations and post-activations of one forward pass."""

    inputs: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]

    @property
    def outputs(self) -> np.ndarray:
        return self.post[-1]


def _same_bits(xs: list[np.ndarray], ys: list[np.ndarray]) -> bool:
    return len(xs) == len(ys) and all(
        x.shape == y.shape and x.tobytes() == y.tobytes() for x, y in zip(xs, ys)
    )


def init_model(spec: ModelSpec) -> tuple[ModelState, OptimizerState]:
    """Glorot-uniform weights from ``spec.init_seed``; zero biases and velocity."""
    if not isinstance(spec, ModelSpec):
        raise InvalidSpec("init_model needs a ModelSpec")
    rng = Xoshiro256(spec.init_seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        vals = [(2.0 * rng.random() - 1.0) * bound for _ in range(fan_in * fan_out)]
        weights.append(np.array(vals, dtype=np.float64).reshape(fan_out, fan_in))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    opt = OptimizerState([np.zeros_like(w) for w in weights], [np.zeros_like(b) for b in biases], 0)
    return ModelState(weights, biases, spec), opt


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z.copy()
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if name == "tanh":
        return np.tanh(z)
    return softmax(z)


def _activation_derivative(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "sigmoid":
        return a * (1.0 - a)
    return 1.0 - a * a  # tanh


def forward(model: ModelState, inputs) -> Trace:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.spec.layer_sizes[0]:
        raise DimensionMismatch(f"inputs must be (n, {model.spec.layer_sizes[0]}), got {x.shape}")
    pre, post = [], []
    h = x
    last = model.spec.n_layers - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        act = model.spec.output_activation if i == last else model.spec.activations[i]
        h = _activate(act, z)
        pre.append(z)
        post.append(h)
    return Trace(x, pre, post)


def backward(model: ModelState, trace: Trace, targets, loss: LossKind | str) -> Gradients:
    """Gradients of the batch-mean loss w.r.t. every weight and bias."""
    loss = as_loss_kind(loss)
    if loss.takes_distribution and model.spec.output_activation != "softmax":
        raise LossActivationMismatch(f"{loss.name} needs a softmax output layer")
    outputs = trace.outputs
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != outputs.shape:
        raise DimensionMismatch(f"targets shape {t.shape} != outputs shape {outputs.shape}")

    d_out = batch_mean_gradient(loss, outputs, t)
    if model.spec.output_activation == "softmax":
        dz = outputs * (d_out - (d_out * outputs).sum(axis=1, keepdims=True))
    else:
        dz = d_out

    n = model.spec.n_layers
    gw: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for i in range(n - 1, -1, -1):
        h_prev = trace.post[i - 1] if i > 0 else trace.inputs
        gw[i] = dz.T @ h_prev
        gb[i] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ model.weights[i]
            act = model.spec.activations[i - 1]
            dz = dh * _activation_derivative(act, trace.pre[i - 1], trace.post[i - 1])
    return Gradients(gw, gb)


def _check_congruent(params: list[np.ndarray], others: list[np.ndarray], what: str) -> None:
    if len(params) != len(others) or any(p.shape != o.shape for p, o in zip(params, others)):
        raise DimensionMismatch(f"{what} shapes do not match the model")


def sgd_step(
    model: ModelState, grads: Gradients, opt: OptimizerState, cfg: OptimizerConfig
) -> tuple[ModelState, OptimizerState]:
    """``v <- momentum * v + g``; ``w <- w - lr * v``; returns new states."""
    _check_congruent(model.weights, grads.weights, "weight gradient")
    _check_congruent(model.biases, grads.biases, "bias gradient")
    _check_congruent(model.weights, opt.weight_velocity, "weight velocity")
    _check_congruent(model.biases, opt.bias_velocity, "bias velocity")
    for g in (*grads.weights, *grads.biases):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient contains NaN or inf")

    lr, mu = cfg.learning_rate, cfg.momentum
    vw = [mu * v + g for v, g in zip(opt.weight_velocity, grads.weights)]
    vb = [mu * v + g for v, g in zip(opt.bias_velocity, grads.biases)]
    new_w = [w - lr * v for w, v in zip(model.weights, vw)]
    new_b = [b - lr * v for b, v in zip(model.biases, vb)]
    return ModelState(new_w, new_b, model.spec), OptimizerState(vw, vb, opt.step_count + 1)


def predict(model: ModelState, features) -> np.ndarray:
    """Argmax class per row (ties toward the lowest index)."""
    return np.argmax(forward(model, features).outputs, axis=1)


def evaluate(model: ModelState, features, targets, loss: LossKind | str) -> tuple[float, float]:
    """Return ``(batch mean loss, argmax accuracy)``."""
    outputs = forward(model, features).outputs
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != outputs.shape:
        raise DimensionMismatch(f"targets shape {t.shape} != outputs shape {outputs.shape}")
    value = batch_mean_loss(loss, outputs, t)
    accuracy = float(np.mean(np.argmax(outputs, axis=1) == np.argmax(t, axis=1)))
    return value, accuracy
