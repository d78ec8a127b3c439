"""Confidence margins and the exponential importance-weight kernel."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, DomainError


@dataclass(frozen=True)
class WeightConfig:
    alpha: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise ConfigurationError(f"alpha must be finite and nonnegative, got {self.alpha}")


@dataclass(frozen=True, eq=False)
class WeightVector:
    raw: np.ndarray
    normalized: np.ndarray


def margins(probs, labels) -> np.ndarray:
    """Row-wise ``p(y) - max_{t != y} p(t)``."""
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if p.shape[1] < 2:
        raise ConfigurationError("margin needs at least two classes")
    if np.any(y < 0) or np.any(y >= p.shape[1]):
        raise ConfigurationError("label out of range")
    rows = np.arange(len(y))
    others = p.copy()
    others[rows, y] = -np.inf
    return p[rows, y] - others.max(axis=1)


def margin(probs, label: int) -> float:
    return float(margins(np.asarray(probs)[None, :], [label])[0])


def correct(probs_or_logits, labels) -> np.ndarray:
    """True where the first maximal entry of the row is the label."""
    s = np.atleast_2d(probs_or_logits)
    return s.argmax(axis=1) == np.atleast_1d(labels)


def importance_weight(margin_value, cfg: WeightConfig | float):
    """``exp(-alpha * margin)``; works elementwise on arrays."""
    alpha = cfg.alpha if isinstance(cfg, WeightConfig) else float(cfg)
    out = np.exp(-alpha * np.asarray(margin_value, dtype=np.float64))
    return out if np.ndim(out) else float(out)


def normalize(raw) -> WeightVector:
    r = np.asarray(raw, dtype=np.float64).ravel()
    if r.size == 0:
        raise DomainError("cannot normalize an empty weight vector")
    if not np.all(r > 0) or not np.all(np.isfinite(r)):
        raise DomainError("importance weights must be positive and finite")
    return WeightVector(raw=r, normalized=r / math.fsum(r))


def weighted_mean(weights, values) -> float:
    """``sum w_i v_i / sum w_i`` with exactly rounded sums.

    Unit weights therefore give exactly ``count / n`` for 0/1 values.
    """
    w = np.asarray(weights, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    return math.fsum(w * v) / math.fsum(w)
