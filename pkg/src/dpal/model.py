"""Feedforward softmax classifier with per-example gradients.

Weights are stored ``(fan_in, fan_out)`` so a layer is ``a @ W + b``.  The
per-example gradient of ``W`` for example ``i`` is the outer product of the
layer input ``a_i`` and the back-propagated error ``delta_i``; DP-SGD uses
that structure to get per-example norms and clipped sums without ever
materialising one gradient per example.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, LabelError, ParameterError
from .numerics import as_matrix, seeded_rng

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden_dims: tuple = ()
    num_classes: int = 10
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ParameterError("input_dim must be >= 1")
        if self.num_classes < 2:
            raise ParameterError("num_classes must be >= 2")
        if any(h < 1 for h in self.hidden_dims):
            raise ParameterError("hidden layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"activation must be one of {ACTIVATIONS}")

    @property
    def layer_dims(self):
        dims = (self.input_dim, *self.hidden_dims, self.num_classes)
        return list(zip(dims[:-1], dims[1:]))

    @property
    def embedding_dim(self) -> int:
        return self.hidden_dims[-1] if self.hidden_dims else self.input_dim

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "num_classes": self.num_classes,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_dims=tuple(d.get("hidden_dims", ())),
            num_classes=int(d.get("num_classes", 10)),
            activation=d.get("activation", "relu"),
        )


@dataclass(frozen=True)
class ModelParams:
    """Per-layer weights and biases.  Also used as a gradient set."""

    arch: Architecture
    weights: tuple
    biases: tuple

    def __post_init__(self):
        dims = self.arch.layer_dims
        if len(self.weights) != len(dims) or len(self.biases) != len(dims):
            raise DimensionError("number of layers does not match the architecture")
        for (fi, fo), w, b in zip(dims, self.weights, self.biases):
            if w.shape != (fi, fo) or b.shape != (fo,):
                raise DimensionError(f"layer shapes {w.shape}/{b.shape} do not match ({fi}, {fo})")

    @property
    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @property
    def num_params(self) -> int:
        return sum(a.size for a in self.arrays)

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    @classmethod
    def from_flat(cls, arch, flat):
        flat = np.asarray(flat, dtype=np.float64)
        weights, biases, pos = [], [], 0
        for fi, fo in arch.layer_dims:
            weights.append(flat[pos:pos + fi * fo].reshape(fi, fo))
            pos += fi * fo
            biases.append(flat[pos:pos + fo].copy())
            pos += fo
        if pos != flat.size:
            raise DimensionError(f"expected {pos} values, got {flat.size}")
        return cls(arch, tuple(weights), tuple(biases))

    @classmethod
    def zeros(cls, arch):
        return cls(
            arch,
            tuple(np.zeros((fi, fo)) for fi, fo in arch.layer_dims),
            tuple(np.zeros(fo) for _, fo in arch.layer_dims),
        )

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(a * a) for a in self.arrays)))

    def scale(self, factor):
        return ModelParams(self.arch, tuple(w * factor for w in self.weights), tuple(b * factor for b in self.biases))

    def add(self, other, alpha=1.0):
        """``self + alpha * other``."""
        return ModelParams(
            self.arch,
            tuple(w + alpha * o for w, o in zip(self.weights, other.weights)),
            tuple(b + alpha * o for b, o in zip(self.biases, other.biases)),
        )

    def as_float32(self):
        """Copy rounded to 32-bit precision (values kept as float64)."""
        cast = lambda a: a.astype(np.float32).astype(np.float64)  # noqa: E731
        return ModelParams(self.arch, tuple(cast(w) for w in self.weights), tuple(cast(b) for b in self.biases))


@dataclass(frozen=True)
class ForwardResult:
    logits: np.ndarray
    embedding: np.ndarray


def init_params(arch: Architecture, seed) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = seeded_rng(seed)
    weights, biases = [], []
    for fi, fo in arch.layer_dims:
        s = np.sqrt(6.0 / (fi + fo))
        weights.append(rng.uniform(-s, s, size=(fi, fo)))
        biases.append(np.zeros(fo))
    return ModelParams(arch, tuple(weights), tuple(biases))


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, a, kind):
    return (z > 0).astype(np.float64) if kind == "relu" else 1.0 - a * a


def _check_batch(params, batch):
    batch = as_matrix(batch, "batch")
    if batch.shape[1] != params.arch.input_dim:
        raise DimensionError(f"batch has {batch.shape[1]} columns, model expects {params.arch.input_dim}")
    return batch


def _forward_all(params, x):
    """Layer inputs, pre-activations and logits."""
    kind = params.arch.activation
    inputs, pre = [], []
    a = x
    n_layers = len(params.weights)
    for li, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ w + b
        pre.append(z)
        a = z if li == n_layers - 1 else _act(z, kind)
    return inputs, pre, a


def forward(params: ModelParams, batch) -> ForwardResult:
    batch = _check_batch(params, batch)
    inputs, _, logits = _forward_all(params, batch)
    return ForwardResult(logits=logits, embedding=inputs[-1])


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_labels(labels, n, num_classes):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise LabelError("labels must be integers")
        labels = labels.astype(np.int64)
    if n and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelError(f"labels must lie in [0, {num_classes})")
    return labels


def per_example_terms(params: ModelParams, batch, labels):
    """Per-example losses plus the layer inputs and errors that define each gradient.

    Returns ``(losses, inputs, deltas)``; the gradient of example ``i``'s loss
    for layer ``l`` is ``outer(inputs[l][i], deltas[l][i])`` for the weight and
    ``deltas[l][i]`` for the bias.
    """
    batch = _check_batch(params, batch)
    n = batch.shape[0]
    if n == 0:
        raise DimensionError("batch must be non-empty")
    labels = _check_labels(labels, n, params.arch.num_classes)
    inputs, pre, logits = _forward_all(params, batch)
    logp = log_softmax(logits)
    rows = np.arange(n)
    losses = -logp[rows, labels]
    delta = np.exp(logp)
    delta[rows, labels] -= 1.0
    deltas = [None] * len(params.weights)
    kind = params.arch.activation
    for li in range(len(params.weights) - 1, -1, -1):
        deltas[li] = delta
        if li > 0:
            back = delta @ params.weights[li].T
            delta = back * _act_grad(pre[li - 1], inputs[li], kind)
    return losses, inputs, deltas


def grad_norms(inputs, deltas) -> np.ndarray:
    """l2 norm of each example's full flattened gradient."""
    sq = 0.0
    for a, d in zip(inputs, deltas):
        dd = np.sum(d * d, axis=1)
        sq = sq + np.sum(a * a, axis=1) * dd + dd
    return np.sqrt(sq)


def weighted_grad_sum(arch, inputs, deltas, coef) -> ModelParams:
    """``sum_i coef[i] * grad_i`` computed layer-wise."""
    weights = tuple((a * coef[:, None]).T @ d for a, d in zip(inputs, deltas))
    biases = tuple(coef @ d for d in deltas)
    return ModelParams(arch, weights, biases)


def loss_and_grads(params: ModelParams, batch, labels):
    """Mean cross-entropy and the list of per-example gradient sets."""
    losses, inputs, deltas = per_example_terms(params, batch, labels)
    grads = []
    for i in range(len(losses)):
        grads.append(
            ModelParams(
                params.arch,
                tuple(np.outer(a[i], d[i]) for a, d in zip(inputs, deltas)),
                tuple(d[i].copy() for d in deltas),
            )
        )
    return float(losses.mean()), grads


def batch_gradient(params: ModelParams, batch, labels):
    """Mean loss and gradient of the mean loss."""
    losses, inputs, deltas = per_example_terms(params, batch, labels)
    n = len(losses)
    grad = weighted_grad_sum(params.arch, inputs, deltas, np.full(n, 1.0 / n))
    return float(losses.mean()), grad


def predict(params: ModelParams, batch, chunk=8192) -> np.ndarray:
    batch = _check_batch(params, batch)
    out = np.empty(batch.shape[0], dtype=np.int64)
    for start in range(0, batch.shape[0], chunk):
        out[start:start + chunk] = np.argmax(forward(params, batch[start:start + chunk]).logits, axis=1)
    return out


def accuracy(params: ModelParams, features, labels) -> float:
    labels = np.asarray(labels)
    if len(labels) == 0:
        return 0.0
    return float(np.mean(predict(params, features) == labels))
