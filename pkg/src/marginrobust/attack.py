"""L-infinity PGD attacks: cross-entropy, margin-weighted cross-entropy, logit margin.

All attacks share one loop. Each example starts at ``x + init_noise_scale * xi``
with ``xi`` standard normal drawn from a generator seeded by
``(seed, example index)``, then takes ``steps`` signed-gradient ascent steps,
each followed by projection onto the intersection of the eps-ball and [0, 1]^d.
Because the noise depends only on the seed and the example's index, attacking
a batch gives the same result as attacking its examples one at a time.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .data import Batch
from .exceptions import ConfigurationError
from .nn import (CROSS_ENTROPY, LOGIT_MARGIN, MLP, LossSpec, _forward_cache, backprop,
                 loss_logit_grad, per_example_loss, softmax_probs)
from .weighting import margins

ATTACK_FLAVORS = ("ce", "weighted-ce", "margin")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.3
    step_size: float = 0.01
    steps: int = 10
    flavor: str = "ce"
    alpha: Optional[float] = None
    init_noise_scale: float = 0.001
    seed: int = 0
    # "logit": max_{t != y} z_t - z_y ; "prob": minus the probability margin
    margin_space: str = "logit"
    # differentiate through exp(-alpha * margin) instead of holding it fixed per step
    weight_gradient: bool = False

    def __post_init__(self):
        if self.flavor not in ATTACK_FLAVORS:
            raise ConfigurationError(f"unknown attack flavor {self.flavor!r}")
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ConfigurationError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if not self.step_size > 0:
            raise ConfigurationError(f"step size must be positive, got {self.step_size}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ConfigurationError(f"steps must be a positive integer, got {self.steps}")
        if self.init_noise_scale < 0:
            raise ConfigurationError("init_noise_scale must be >= 0")
        if self.flavor == "weighted-ce":
            if self.alpha is None or not (math.isfinite(self.alpha) and self.alpha >= 0):
                raise ConfigurationError("weighted-ce needs a finite alpha >= 0")
        if self.margin_space not in ("logit", "prob"):
            raise ConfigurationError(f"margin_space must be 'logit' or 'prob', got {self.margin_space!r}")
        if self.step_size > self.epsilon > 0:
            warnings.warn(f"step size {self.step_size} exceeds epsilon {self.epsilon}", stacklevel=3)


def project(x_adv: np.ndarray, x: np.ndarray, epsilon: float) -> np.ndarray:
    """Clamp to the eps-box around ``x``, then to [0, 1].

    Both sets are axis-aligned boxes, so this is the exact projection onto
    their intersection (which is nonempty because x itself is in [0, 1]).
    """
    return np.clip(np.clip(x_adv, x - epsilon, x + epsilon), 0.0, 1.0)


def initial_noise(indices, d: int, seed: int) -> np.ndarray:
    return np.stack([np.random.default_rng([seed, int(i)]).standard_normal(d) for i in indices])


def _margin_logit_grad(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(probability margin)/d(logits), runner-up held at its argmax."""
    rows = np.arange(len(labels))
    others = probs.copy()
    others[rows, labels] = -np.inf
    t = others.argmax(axis=1)
    p_y = probs[rows, labels][:, None]
    p_t = probs[rows, t][:, None]
    g = -(p_y - p_t) * probs
    g[rows, labels] += p_y[:, 0]
    g[rows, t] -= p_t[:, 0]
    return g


def _ascent_direction(model: MLP, x_adv, y, cfg: AttackConfig, reference, trace):
    acts, pre = _forward_cache(model, x_adv)
    z = acts[-1]
    if reference is not None:
        d = loss_logit_grad(z, y, LossSpec("kl-to-reference", reference))
    elif cfg.flavor == "margin":
        if cfg.margin_space == "logit":
            d = loss_logit_grad(z, y, LOGIT_MARGIN)
        else:
            d = -_margin_logit_grad(softmax_probs(z), y)
    else:
        d = loss_logit_grad(z, y, CROSS_ENTROPY)
        if cfg.flavor == "weighted-ce":
            p = softmax_probs(z)
            s = np.exp(-cfg.alpha * margins(p, y))
            if cfg.weight_gradient:
                # grad(s * l) = s * (grad l - alpha * l * grad margin)
                loss = per_example_loss(z, y, CROSS_ENTROPY)
                d = d - cfg.alpha * loss[:, None] * _margin_logit_grad(p, y)
            d = d * s[:, None]
            if trace is not None:
                trace.append((x_adv.copy(), s.copy()))
    _, g = backprop(model, acts, pre, d, need_params=False)
    return g


def _run(model: MLP, inputs, labels, cfg: AttackConfig, indices=None, reference=None, trace=None):
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    idx = np.arange(len(y)) if indices is None else np.atleast_1d(np.asarray(indices, dtype=np.int64))
    if x.shape[1] != model.n_inputs:
        raise ConfigurationError(f"input width {x.shape[1]} does not match model input width {model.n_inputs}")
    x_adv = x
    if cfg.init_noise_scale > 0:
        x_adv = x + cfg.init_noise_scale * initial_noise(idx, x.shape[1], cfg.seed)
    x_adv = project(x_adv, x, cfg.epsilon)
    for _ in range(int(cfg.steps)):
        g = _ascent_direction(model, x_adv, y, cfg, reference, trace)
        x_adv = project(x_adv + cfg.step_size * np.sign(g), x, cfg.epsilon)
    return x_adv


def _single(model, x, label, cfg, index, trace=None):
    return _run(model, np.asarray(x, dtype=np.float64)[None, :], [label], cfg, [index], trace=trace)[0]


def pgd(model: MLP, x, label: int, cfg: AttackConfig, index: int = 0) -> np.ndarray:
    """Cross-entropy PGD on one example."""
    if cfg.flavor != "ce":
        raise ConfigurationError("pgd expects an attack config with flavor 'ce'")
    return _single(model, x, label, cfg, index)


def weighted_pgd(model: MLP, x, label: int, cfg: AttackConfig, index: int = 0, trace=None) -> np.ndarray:
    """PGD on ``exp(-alpha * margin) * CE``, the weight refreshed at every iterate.

    If ``trace`` is a list, ``(iterate, weight)`` is appended before each step.
    """
    if cfg.flavor != "weighted-ce":
        raise ConfigurationError("weighted_pgd expects an attack config with flavor 'weighted-ce'")
    return _single(model, x, label, cfg, index, trace=trace)


def margin_pgd(model: MLP, x, label: int, cfg: AttackConfig, index: int = 0) -> np.ndarray:
    if cfg.flavor != "margin":
        raise ConfigurationError("margin_pgd expects an attack config with flavor 'margin'")
    return _single(model, x, label, cfg, index)


def attack_inputs(model: MLP, inputs, labels, cfg: AttackConfig, indices=None) -> np.ndarray:
    return _run(model, inputs, labels, cfg, indices)


def batch_attack(model: MLP, batch: Batch, cfg: AttackConfig) -> Batch:
    """Attack every example of ``batch`` using its own index-derived noise seed."""
    x_adv = _run(model, batch.inputs, batch.labels, cfg, batch.indices)
    return Batch(x_adv, batch.labels, batch.indices)


def kl_attack(model: MLP, batch: Batch, cfg: AttackConfig) -> Batch:
    """PGD ascending KL(softmax f(x) || softmax f(x')), the TRADES inner problem."""
    reference = _forward_cache(model, np.atleast_2d(batch.inputs))[0][-1]
    x_adv = _run(model, batch.inputs, batch.labels, replace(cfg, flavor="ce"), batch.indices,
                 reference=reference)
    return Batch(x_adv, batch.labels, batch.indices)
