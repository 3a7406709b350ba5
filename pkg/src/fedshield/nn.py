"""Small dense network: tanh hidden layers, softmax output, manual backprop.

Parameters are flattened layer by layer; within a layer the weight matrix
comes first (row-major, shape ``(fan_out, fan_in)``) followed by the bias.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DataError

PROB_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class MlpModel:
    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        _check_architecture(sizes)
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ConfigurationError("need one weight matrix and one bias per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]):
                raise ConfigurationError(
                    f"layer {i}: weight shape {w.shape}, expected {(sizes[i + 1], sizes[i])}"
                )
            if b.shape != (sizes[i + 1],):
                raise ConfigurationError(f"layer {i}: bias shape {b.shape}, expected {(sizes[i + 1],)}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ConfigurationError(f"layer {i}: non-finite parameters")

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_parameters(self) -> int:
        return num_parameters(self.layer_sizes)


def _check_architecture(layer_sizes):
    if len(layer_sizes) < 2:
        raise ConfigurationError("an architecture needs at least input and output sizes")
    if any(s < 1 for s in layer_sizes):
        raise ConfigurationError(f"layer sizes must be positive, got {list(layer_sizes)}")


def num_parameters(layer_sizes: Sequence[int]) -> int:
    """Total parameter count: sum of fan_in * fan_out + fan_out over layers."""
    _check_architecture(layer_sizes)
    return sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


def init_model(layer_sizes: Sequence[int], seed: int) -> MlpModel:
    """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] from a seeded generator."""
    sizes = tuple(int(s) for s in layer_sizes)
    _check_architecture(sizes)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        s = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-s, s, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-s, s, size=fan_out))
    return MlpModel(sizes, tuple(weights), tuple(biases))


def zeros_model(layer_sizes: Sequence[int]) -> MlpModel:
    sizes = tuple(int(s) for s in layer_sizes)
    return unflatten(np.zeros(num_parameters(sizes)), sizes)


def flatten(model: MlpModel) -> np.ndarray:
    parts = []
    for w, b in zip(model.weights, model.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts).astype(np.float64, copy=True)


def unflatten(vector, layer_sizes: Sequence[int]) -> MlpModel:
    sizes = tuple(int(s) for s in layer_sizes)
    vector = np.asarray(vector, dtype=np.float64)
    expected = num_parameters(sizes)
    if vector.ndim != 1 or vector.size != expected:
        raise ConfigurationError(
            f"parameter vector has length {vector.size}, architecture {list(sizes)} needs {expected}"
        )
    weights, biases = [], []
    pos = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        n = fan_in * fan_out
        weights.append(vector[pos:pos + n].reshape(fan_out, fan_in).copy())
        pos += n
        biases.append(vector[pos:pos + fan_out].copy())
        pos += fan_out
    return MlpModel(sizes, tuple(weights), tuple(biases))


def _softmax_rows(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _as_batch(model, batch):
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.layer_sizes[0]:
        raise ConfigurationError(
            f"batch has shape {x.shape}, model expects {model.layer_sizes[0]} features"
        )
    return x


def _forward_trace(model, x):
    activations = [x]
    a = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        a = _softmax_rows(z) if i == last else np.tanh(z)
        activations.append(a)
    return activations


def forward(model: MlpModel, batch) -> np.ndarray:
    """Class probabilities, one row per sample."""
    return _forward_trace(model, _as_batch(model, batch))[-1]


def _check_labels(labels, n, num_classes):
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != n:
        raise DataError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise DataError("labels must be integers")
        y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        bad = y[(y < 0) | (y >= num_classes)][0]
        raise DataError(f"label {bad} outside [0, {num_classes})")
    return y


def cross_entropy_loss(probs, labels) -> float:
    """Mean negative log-likelihood of the true labels, probabilities floored at 1e-12."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise ConfigurationError("probs must be a 2-d matrix")
    y = _check_labels(labels, p.shape[0], p.shape[1])
    picked = np.maximum(p[np.arange(p.shape[0]), y], PROB_FLOOR)
    return float(-np.mean(np.log(picked)))


def loss(model: MlpModel, batch, labels) -> float:
    return cross_entropy_loss(forward(model, batch), labels)


def backward(model: MlpModel, batch, labels) -> np.ndarray:
    """Gradient of the mean cross-entropy w.r.t. all parameters, in flatten order."""
    x = _as_batch(model, batch)
    y = _check_labels(labels, x.shape[0], model.num_classes)
    acts = _forward_trace(model, x)
    n = x.shape[0]

    delta = acts[-1].copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n

    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        grads_w[i] = delta.T @ acts[i]
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            # tanh'(z) = 1 - tanh(z)^2
            delta = (delta @ model.weights[i]) * (1.0 - acts[i] ** 2)

    parts = []
    for gw, gb in zip(grads_w, grads_b):
        parts.append(gw.ravel())
        parts.append(gb)
    return np.concatenate(parts)


def sgd_step(model: MlpModel, grad, alpha: float) -> MlpModel:
    """Return a new model with parameters ``theta - alpha * grad``."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != (model.num_parameters,):
        raise ConfigurationError(
            f"gradient has length {grad.size}, model has {model.num_parameters} parameters"
        )
    if not alpha >= 0:
        raise ConfigurationError(f"learning rate must be non-negative, got {alpha}")
    return unflatten(flatten(model) - alpha * grad, model.layer_sizes)
