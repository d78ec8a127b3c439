"""Small feed-forward ReLU networks with exact backprop.

Everything runs in float64. A :class:`MLP` is an immutable value: training
produces new instances through :func:`sgd_step`. The same class doubles as
the container for parameter gradients, so gradients and models can be added,
scaled and compared layer by layer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import ConfigurationError

LOSS_FLAVORS = ("cross-entropy", "kl-to-reference", "logit-margin")

_MAGIC = b"MRMLP\x00"
_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class MLP:
    """Layer weights (``out x in``) and biases; ReLU between layers, raw logits out."""

    weights: tuple
    biases: tuple

    def __post_init__(self):
        if len(self.weights) == 0 or len(self.weights) != len(self.biases):
            raise ConfigurationError("need one bias per weight matrix and at least one layer")
        w = tuple(np.asarray(a, dtype=np.float64) for a in self.weights)
        b = tuple(np.asarray(a, dtype=np.float64) for a in self.biases)
        for i, (wi, bi) in enumerate(zip(w, b)):
            if wi.ndim != 2 or bi.shape != (wi.shape[0],):
                raise ConfigurationError(f"layer {i}: weight {wi.shape} / bias {bi.shape} mismatch")
            if i > 0 and wi.shape[1] != w[i - 1].shape[0]:
                raise ConfigurationError(
                    f"layer {i} expects width {wi.shape[1]}, previous layer emits {w[i - 1].shape[0]}"
                )
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def dims(self) -> tuple:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[0]

    def parameters(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())

    def zeros_like(self) -> "MLP":
        return MLP(tuple(np.zeros_like(w) for w in self.weights),
                   tuple(np.zeros_like(b) for b in self.biases))

    def scaled(self, c: float) -> "MLP":
        return MLP(tuple(c * w for w in self.weights), tuple(c * b for b in self.biases))

    def __add__(self, other: "MLP") -> "MLP":
        return MLP(tuple(a + b for a, b in zip(self.weights, other.weights)),
                   tuple(a + b for a, b in zip(self.biases, other.biases)))

    def equals(self, other: "MLP") -> bool:
        """Bitwise equality of every parameter."""
        if self.dims != other.dims:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters()))

    @classmethod
    def from_flat(cls, dims: Sequence[int], flat: np.ndarray) -> "MLP":
        flat = np.asarray(flat, dtype=np.float64)
        weights, biases, pos = [], [], 0
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            weights.append(flat[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in))
            pos += fan_in * fan_out
            biases.append(flat[pos:pos + fan_out])
            pos += fan_out
        if pos != flat.size:
            raise ConfigurationError(f"flat vector has {flat.size} entries, dims {tuple(dims)} need {pos}")
        return cls(tuple(weights), tuple(biases))


def init_mlp(dims: Sequence[int], seed: int = 0) -> MLP:
    """Glorot-uniform weights, zero biases, drawn from a seeded generator."""
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ConfigurationError(f"invalid layer widths {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLP(tuple(weights), tuple(biases))


@dataclass(frozen=True)
class LossSpec:
    flavor: str = "cross-entropy"
    reference_logits: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.flavor not in LOSS_FLAVORS:
            raise ConfigurationError(f"unknown loss flavor {self.flavor!r}; expected one of {LOSS_FLAVORS}")
        if (self.flavor == "kl-to-reference") != (self.reference_logits is not None):
            raise ConfigurationError("reference logits are required for, and only for, kl-to-reference")


CROSS_ENTROPY = LossSpec("cross-entropy")
LOGIT_MARGIN = LossSpec("logit-margin")


def _as_inputs(model: MLP, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.n_inputs:
        raise ConfigurationError(f"input width {x.shape[-1]} does not match model input width {model.n_inputs}")
    return x


def _forward_cache(model: MLP, x: np.ndarray):
    acts = [x]
    pre = []
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts, pre


def forward(model: MLP, inputs) -> np.ndarray:
    """Logits of shape ``(m, C)``; a 1-D input is treated as a batch of one."""
    acts, _ = _forward_cache(model, _as_inputs(model, inputs))
    return acts[-1]


def softmax_probs(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _runner_up(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    # smallest-index argmax over the wrong classes
    masked = logits.copy()
    masked[np.arange(len(labels)), labels] = -np.inf
    return masked.argmax(axis=1)


def per_example_loss(logits, labels, spec: LossSpec = CROSS_ENTROPY) -> np.ndarray:
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    rows = np.arange(len(y))
    if spec.flavor == "cross-entropy":
        return -log_softmax(z)[rows, y]
    if spec.flavor == "kl-to-reference":
        ref = np.atleast_2d(np.asarray(spec.reference_logits, dtype=np.float64))
        log_p = log_softmax(ref)
        return np.sum(np.exp(log_p) * (log_p - log_softmax(z)), axis=1)
    t = _runner_up(z, y)
    return z[rows, t] - z[rows, y]


def loss_logit_grad(logits, labels, spec: LossSpec = CROSS_ENTROPY) -> np.ndarray:
    """Derivative of each row's loss with respect to that row's logits."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    rows = np.arange(len(y))
    if spec.flavor == "cross-entropy":
        g = softmax_probs(z)
        g[rows, y] -= 1.0
        return g
    if spec.flavor == "kl-to-reference":
        return softmax_probs(z) - softmax_probs(np.atleast_2d(spec.reference_logits))
    g = np.zeros_like(z)
    g[rows, _runner_up(z, y)] = 1.0
    g[rows, y] -= 1.0
    return g


def backprop(model: MLP, acts, pre, d_logits: np.ndarray, need_params: bool = True):
    """Push ``dL/dlogits`` back through the network.

    Returns ``(param_grad, input_grad)`` for the *sum* over rows; ``param_grad``
    is None when ``need_params`` is false.
    """
    d = d_logits
    gw = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        if need_params:
            gw[i] = d.T @ acts[i]
            gb[i] = d.sum(axis=0)
        d = d @ model.weights[i]
        if i > 0:
            d = d * (pre[i - 1] > 0)
    params = MLP(tuple(gw), tuple(gb)) if need_params else None
    return params, d


def grad_params(model: MLP, inputs, labels, spec: LossSpec = CROSS_ENTROPY, example_weights=None) -> MLP:
    """Gradient of ``(1/m) sum_i w_i * loss_i`` with the weights held constant."""
    x = _as_inputs(model, inputs)
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    m = len(y)
    w = np.ones(m) if example_weights is None else np.asarray(example_weights, dtype=np.float64)
    if w.shape != (m,) or not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("example weights must be finite, nonnegative and one per example")
    acts, pre = _forward_cache(model, x)
    d = loss_logit_grad(acts[-1], y, spec) * (w / m)[:, None]
    params, _ = backprop(model, acts, pre, d)
    return params


def grad_inputs(model: MLP, inputs, labels, spec: LossSpec = CROSS_ENTROPY, row_scale=None) -> np.ndarray:
    """Per-row input gradient of each row's loss (optionally scaled per row)."""
    x = _as_inputs(model, inputs)
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    acts, pre = _forward_cache(model, x)
    d = loss_logit_grad(acts[-1], y, spec)
    if row_scale is not None:
        d = d * np.asarray(row_scale, dtype=np.float64)[:, None]
    _, dx = backprop(model, acts, pre, d, need_params=False)
    return dx


def grad_input(model: MLP, x, label: int, spec: LossSpec = CROSS_ENTROPY) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return grad_inputs(model, x[None, :], [label], spec)[0]


def sgd_step(model: MLP, gradient: MLP, lr: float) -> MLP:
    if not lr > 0:
        raise ConfigurationError(f"learning rate must be positive, got {lr}")
    return MLP(tuple(w - lr * g for w, g in zip(model.weights, gradient.weights)),
               tuple(b - lr * g for b, g in zip(model.biases, gradient.biases)))


def predict(model: MLP, inputs) -> np.ndarray:
    # np.argmax returns the first maximal index, which is the tie-break rule
    return forward(model, inputs).argmax(axis=1)


# -- persistence -------------------------------------------------------------
# Layout: magic, u32 version, u32 layer count, (layer count + 1) u32 widths,
# then for each layer the row-major float64 weight block followed by the bias.
# Integers big-endian, floats little-endian IEEE 754.

def model_to_bytes(model: MLP) -> bytes:
    dims = model.dims
    header = _MAGIC + struct.pack(f">II{len(dims)}I", _FORMAT_VERSION, len(model.weights), *dims)
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.parameters())
    return header + body


def model_from_bytes(blob: bytes) -> MLP:
    if not blob.startswith(_MAGIC):
        raise ValueError("not a model file (bad magic)")
    pos = len(_MAGIC)
    version, n_layers = struct.unpack_from(">II", blob, pos)
    if version != _FORMAT_VERSION:
        raise ValueError(f"unsupported model file version {version}")
    pos += 8
    dims = struct.unpack_from(f">{n_layers + 1}I", blob, pos)
    pos += 4 * (n_layers + 1)
    n_params = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    if len(blob) - pos != 8 * n_params:
        raise ValueError(f"model file body has {len(blob) - pos} bytes, expected {8 * n_params}")
    flat = np.frombuffer(blob, dtype="<f8", offset=pos).astype(np.float64)
    return MLP.from_flat(dims, flat)


def save_model(model: MLP, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> MLP:
    return model_from_bytes(Path(path).read_bytes())
