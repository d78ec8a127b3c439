"""Training regimes: natural, PGD adversarial, combined, TRADES and the margin-weighted variants.

The weighted regimes scale each example's adversarial loss by
``exp(-alpha_train * margin(x'))``, the margin measured at the final attack
iterate. Weights are raw (not renormalized within a batch) and are treated as
constants when differentiating with respect to the parameters.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .attack import AttackConfig, batch_attack, kl_attack
from .data import Batch, Dataset, as_batch, minibatches
from .exceptions import ConfigurationError, DomainError
from .nn import (CROSS_ENTROPY, MLP, _forward_cache, backprop, forward, grad_params, log_softmax,
                 per_example_loss, sgd_step, softmax_probs)
from .weighting import margins

REGIMES = ("natural", "at", "combined", "trades", "weighted-at", "weighted-trades")
ADVERSARIAL_REGIMES = REGIMES[1:]


@dataclass(frozen=True)
class TrainConfig:
    regime: str = "at"
    epochs: int = 15
    batch_size: int = 128
    lr: float = 0.1
    attack: Optional[AttackConfig] = field(default_factory=AttackConfig)
    alpha_train: Optional[float] = None
    lambda_inv: Optional[float] = None
    combine_lambda: Optional[float] = None
    seed: int = 0
    # weighted-trades: weight the whole per-example loss ("loss") or only the KL term ("kl")
    trades_weight_scope: str = "loss"

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigurationError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ConfigurationError("epochs must be a nonnegative integer")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigurationError("batch_size must be a positive integer")
        if not self.lr > 0:
            raise ConfigurationError("lr must be positive")
        if self.regime in ADVERSARIAL_REGIMES and self.attack is None:
            raise ConfigurationError(f"regime {self.regime!r} needs an attack config")
        if self.regime.startswith("weighted"):
            if self.alpha_train is None or not (math.isfinite(self.alpha_train) and self.alpha_train >= 0):
                raise ConfigurationError(f"regime {self.regime!r} needs alpha_train >= 0")
        if self.regime.endswith("trades") and not (self.lambda_inv is not None and self.lambda_inv > 0):
            raise ConfigurationError(f"regime {self.regime!r} needs lambda_inv > 0")
        if self.regime == "combined" and not (self.combine_lambda is not None and self.combine_lambda > 0):
            raise ConfigurationError("regime 'combined' needs combine_lambda > 0")
        if self.trades_weight_scope not in ("loss", "kl"):
            raise ConfigurationError("trades_weight_scope must be 'loss' or 'kl'")


LOG_COLUMNS = ("epoch", "weighted_loss", "raw_loss", "train_acc", "mean_margin", "mean_weight")


@dataclass
class TrainLog:
    records: List[dict] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for r in self.records:
                w.writerow([r["epoch"]] + [repr(float(r[c])) for c in LOG_COLUMNS[1:]])


def trades_batch_loss(model: MLP, batch: Batch, adversarial_batch: Batch, lambda_inv: float,
                      weights=None, weight_scope: str = "loss"):
    """Mean weighted TRADES loss and its parameter gradient.

    Per example: ``CE(f(x), y) + lambda_inv * KL(softmax f(x) || softmax f(x'))``.
    Both the clean and the adversarial logits depend on the parameters; the
    weights do not.
    """
    y = np.asarray(batch.labels, dtype=np.int64)
    m = len(y)
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=np.float64)
    rows = np.arange(m)
    acts_c, pre_c = _forward_cache(model, np.atleast_2d(batch.inputs))
    acts_a, pre_a = _forward_cache(model, np.atleast_2d(adversarial_batch.inputs))
    log_p, log_q = log_softmax(acts_c[-1]), log_softmax(acts_a[-1])
    p, q = np.exp(log_p), np.exp(log_q)
    ce = -log_p[rows, y]
    kl = np.sum(p * (log_p - log_q), axis=1)

    w_ce, w_kl = (np.ones(m), w) if weight_scope == "kl" else (w, w)
    loss = math.fsum(w_ce * ce + lambda_inv * w_kl * kl) / m

    d_ce = p.copy()
    d_ce[rows, y] -= 1.0
    # d KL / d clean logits = p * (log p - log q - KL)
    d_kl_clean = p * ((log_p - log_q) - kl[:, None])
    d_clean = (w_ce / m)[:, None] * d_ce + (lambda_inv * w_kl / m)[:, None] * d_kl_clean
    d_adv = (lambda_inv * w_kl / m)[:, None] * (q - p)
    g_clean, _ = backprop(model, acts_c, pre_c, d_clean)
    g_adv, _ = backprop(model, acts_a, pre_a, d_adv)
    return loss, g_clean + g_adv


def _epoch_attack(cfg: TrainConfig, epoch: int) -> AttackConfig:
    seed = int(np.random.SeedSequence([cfg.attack.seed, cfg.seed, epoch]).generate_state(1)[0])
    if cfg.regime == "weighted-at":
        return replace(cfg.attack, flavor="weighted-ce", alpha=cfg.alpha_train, seed=seed)
    return replace(cfg.attack, flavor="ce", alpha=None, seed=seed)


def _batch_step(model: MLP, batch: Batch, cfg: TrainConfig, attack_cfg: Optional[AttackConfig]):
    """One parameter update. Returns the new model and per-example statistics."""
    y = batch.labels
    alpha = cfg.alpha_train or 0.0
    clean_logits = forward(model, batch.inputs)
    acc = clean_logits.argmax(axis=1) == y

    if cfg.regime == "natural":
        raw = per_example_loss(clean_logits, y)
        marg = margins(softmax_probs(clean_logits), y)
        w = np.ones(len(y))
        g = grad_params(model, batch.inputs, y, CROSS_ENTROPY, w)
        return sgd_step(model, g, cfg.lr), raw, w * raw, acc, marg, w

    if cfg.regime in ("trades", "weighted-trades"):
        adv = kl_attack(model, batch, attack_cfg)
        adv_logits = forward(model, adv.inputs)
        marg = margins(softmax_probs(adv_logits), y)
        w = np.exp(-alpha * marg) if cfg.regime == "weighted-trades" else np.ones(len(y))
        log_p, log_q = log_softmax(clean_logits), log_softmax(adv_logits)
        raw = -log_p[np.arange(len(y)), y] + cfg.lambda_inv * np.sum(np.exp(log_p) * (log_p - log_q), axis=1)
        _, g = trades_batch_loss(model, batch, adv, cfg.lambda_inv, w, cfg.trades_weight_scope)
        return sgd_step(model, g, cfg.lr), raw, w * raw, acc, marg, w

    adv = batch_attack(model, batch, attack_cfg)
    adv_logits = forward(model, adv.inputs)
    adv_loss = per_example_loss(adv_logits, y)
    marg = margins(softmax_probs(adv_logits), y)
    if cfg.regime == "combined":
        w = np.ones(len(y))
        g = grad_params(model, batch.inputs, y, CROSS_ENTROPY, w) + \
            grad_params(model, adv.inputs, y, CROSS_ENTROPY, w).scaled(cfg.combine_lambda)
        raw = per_example_loss(clean_logits, y) + cfg.combine_lambda * adv_loss
        return sgd_step(model, g, cfg.lr), raw, raw, acc, marg, w

    w = np.exp(-alpha * marg) if cfg.regime == "weighted-at" else np.ones(len(y))
    g = grad_params(model, adv.inputs, y, CROSS_ENTROPY, w)
    return sgd_step(model, g, cfg.lr), adv_loss, w * adv_loss, acc, marg, w


def train(model: MLP, data: Dataset, cfg: TrainConfig, callback=None):
    """Run ``cfg.epochs`` epochs of minibatch SGD; returns ``(model, TrainLog)``.

    ``callback(epoch, batch_number, model)`` is called after every update.
    """
    if data.n_features != model.n_inputs or data.class_count != model.n_classes:
        raise ConfigurationError(
            f"model {model.dims} does not fit data with {data.n_features} features / {data.class_count} classes"
        )
    log = TrainLog()
    for epoch in range(int(cfg.epochs)):
        attack_cfg = _epoch_attack(cfg, epoch) if cfg.regime in ADVERSARIAL_REGIMES else None
        stats = {k: [] for k in ("raw", "weighted", "acc", "margin", "weight")}
        for b, batch in enumerate(minibatches(data, int(cfg.batch_size), cfg.seed, epoch)):
            model, raw, weighted, acc, marg, w = _batch_step(model, batch, cfg, attack_cfg)
            for k, v in zip(stats, (raw, weighted, acc, marg, w)):
                stats[k].append(v)
            if callback is not None:
                callback(epoch, b, model)
        cat = {k: np.concatenate(v).astype(np.float64) for k, v in stats.items()}
        log.records.append({
            "epoch": epoch + 1,
            "weighted_loss": math.fsum(cat["weighted"]) / len(data),
            "raw_loss": math.fsum(cat["raw"]) / len(data),
            "train_acc": math.fsum(cat["acc"]) / len(data),
            "mean_margin": math.fsum(cat["margin"]) / len(data),
            "mean_weight": math.fsum(cat["weight"]) / len(data),
        })
    return model, log


# -- mini-batch unbiasedness ----------------------------------------------------

def weighted_adversarial_losses(model: MLP, batch: Batch, alpha: float, attack_cfg: AttackConfig) -> np.ndarray:
    """``exp(-alpha * margin(x')) * CE(f(x'), y)`` per example, x' from weighted PGD."""
    cfg = replace(attack_cfg, flavor="weighted-ce", alpha=alpha)
    adv = batch_attack(model, batch, cfg)
    logits = forward(model, adv.inputs)
    return np.exp(-alpha * margins(softmax_probs(logits), batch.labels)) * per_example_loss(logits, batch.labels)


def minibatch_unbiasedness_check(model: MLP, data: Dataset, alpha: float, attack_cfg: AttackConfig,
                                 trials: int = 1000, m: int = 8, seed: int = 0,
                                 sampling: str = "with-replacement") -> dict:
    """Compare the full-data weighted adversarial loss with the mean of minibatch estimates.

    ``sampling="whole"`` uses the entire dataset (in order) as every minibatch.
    """
    if trials < 30:
        raise DomainError("need at least 30 trials for a meaningful z-score")
    if sampling not in ("with-replacement", "whole"):
        raise ConfigurationError(f"unknown sampling {sampling!r}")
    full_values = weighted_adversarial_losses(model, as_batch(data), alpha, attack_cfg)
    full = math.fsum(full_values) / len(data)
    rng = np.random.default_rng(seed)
    estimates = np.empty(trials)
    for t in range(trials):
        if sampling == "whole":
            idx = np.arange(len(data))
        else:
            idx = rng.integers(0, len(data), size=m)
        batch = Batch(data.features[idx], data.labels[idx], idx)
        estimates[t] = math.fsum(weighted_adversarial_losses(model, batch, alpha, attack_cfg)) / len(idx)
    mean = math.fsum(estimates) / trials
    stderr = float(np.std(estimates, ddof=1) / np.sqrt(trials))
    diff = mean - full
    z = 0.0 if diff == 0 else (diff / stderr if stderr > 0 else math.copysign(math.inf, diff))
    return {"full_batch_value": full, "minibatch_mean": mean, "abs_diff": abs(diff),
            "stderr": stderr, "z_score": z}
