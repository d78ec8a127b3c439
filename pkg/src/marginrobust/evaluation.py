"""Natural, robust and importance-sampled accuracies.

``a_sa`` and ``a_tr`` are weighted accuracies ``sum_i s_i 1_i / sum_i s_i`` with
``s_i = exp(-alpha_eval * margin_i)``: the attacker picks example ``i`` with
probability ``s_i / sum s``. ``a_sa`` reuses the cross-entropy PGD points that
define ``a_rob``; ``a_tr`` attacks with weighted PGD. Every attack in one
evaluation uses the same noise seed, so at ``alpha_eval = 0`` all three
accuracies coincide exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .attack import AttackConfig, attack_inputs
from .data import Dataset
from .exceptions import DomainError
from .nn import CROSS_ENTROPY, LOGIT_MARGIN, MLP, forward, per_example_loss, softmax_probs
from .weighting import margins, normalize, weighted_mean

PER_EXAMPLE_COLUMNS = ("index", "margin", "weight", "normalized_weight", "ind_rob", "ind_sa", "ind_tr", "adv_loss")


@dataclass(eq=False)
class EvalReport:
    a_nat: float
    a_rob: float
    a_sa: Optional[float]
    a_tr: Optional[float]
    margin: np.ndarray
    weight: np.ndarray
    normalized_weight: np.ndarray
    ind_rob: np.ndarray
    ind_sa: np.ndarray
    ind_tr: np.ndarray
    adv_loss: np.ndarray
    config: dict = field(default_factory=dict)
    # weights at the weighted-PGD points (a_tr's sampling distribution)
    weight_tr: Optional[np.ndarray] = None
    normalized_weight_tr: Optional[np.ndarray] = None

    def metrics(self) -> dict:
        out = {"a_nat": self.a_nat, "a_rob": self.a_rob}
        if self.a_sa is not None:
            out.update(a_sa=self.a_sa, a_tr=self.a_tr)
        return out

    def to_json(self, path) -> None:
        payload = {"metrics": self.metrics(), "config": self.config, "n": int(len(self.ind_rob))}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(PER_EXAMPLE_COLUMNS)
            for i in range(len(self.ind_rob)):
                w.writerow([i, repr(float(self.margin[i])), repr(float(self.weight[i])),
                            repr(float(self.normalized_weight[i])), int(self.ind_rob[i]),
                            int(self.ind_sa[i]), int(self.ind_tr[i]), repr(float(self.adv_loss[i]))])


def _check(testset: Dataset):
    if len(testset) == 0:
        raise DomainError("cannot evaluate on an empty test set")


def _ce_attack(cfg: AttackConfig) -> AttackConfig:
    return replace(cfg, flavor="ce", alpha=None)


def eval_natural(model: MLP, testset: Dataset) -> float:
    _check(testset)
    hits = forward(model, testset.features).argmax(axis=1) == testset.labels
    return int(hits.sum()) / len(testset)


def _attacked(model, testset, cfg):
    x_adv = attack_inputs(model, testset.features, testset.labels, cfg, np.arange(len(testset)))
    logits = forward(model, x_adv)
    return logits, logits.argmax(axis=1) == testset.labels


def eval_robust(model: MLP, testset: Dataset, attack_cfg: AttackConfig) -> float:
    _check(testset)
    _, hits = _attacked(model, testset, _ce_attack(attack_cfg))
    return int(hits.sum()) / len(testset)


def weighted_accuracy(indicators, margin_values, alpha_eval: float) -> float:
    return weighted_mean(np.exp(-alpha_eval * np.asarray(margin_values)), indicators)


def eval_sa(model: MLP, testset: Dataset, attack_cfg: AttackConfig, alpha_eval: float) -> float:
    _check(testset)
    logits, hits = _attacked(model, testset, _ce_attack(attack_cfg))
    return weighted_accuracy(hits, margins(softmax_probs(logits), testset.labels), alpha_eval)


def eval_tr(model: MLP, testset: Dataset, attack_cfg: AttackConfig, alpha_eval: float) -> float:
    _check(testset)
    cfg = replace(attack_cfg, flavor="weighted-ce", alpha=alpha_eval)
    logits, hits = _attacked(model, testset, cfg)
    return weighted_accuracy(hits, margins(softmax_probs(logits), testset.labels), alpha_eval)


def evaluate_many(model: MLP, testset: Dataset, attack_cfg: AttackConfig,
                  alpha_evals: Sequence[float] = ()) -> list:
    """One report per ``alpha_eval``; with no alphas, a single a_nat/a_rob report.

    The unweighted PGD points are computed once and shared by every report.
    """
    _check(testset)
    y = testset.labels
    a_nat = eval_natural(model, testset)
    ce_cfg = _ce_attack(attack_cfg)
    logits, hits = _attacked(model, testset, ce_cfg)
    marg = margins(softmax_probs(logits), y)
    adv_loss = per_example_loss(logits, y, CROSS_ENTROPY)
    a_rob = int(hits.sum()) / len(testset)
    echo = {"epsilon": attack_cfg.epsilon, "steps": int(attack_cfg.steps), "step_size": attack_cfg.step_size,
            "init_noise_scale": attack_cfg.init_noise_scale, "seed": int(attack_cfg.seed),
            "weight_gradient": bool(attack_cfg.weight_gradient)}

    if len(alpha_evals) == 0:
        ones = np.ones(len(y))
        return [EvalReport(a_nat, a_rob, None, None, marg, ones, ones / len(y), hits, hits, hits,
                           adv_loss, dict(echo, alpha_eval=None))]

    reports = []
    for alpha in alpha_evals:
        alpha = float(alpha)
        wv = normalize(np.exp(-alpha * marg))
        tr_logits, tr_hits = _attacked(model, testset, replace(attack_cfg, flavor="weighted-ce", alpha=alpha))
        tr_wv = normalize(np.exp(-alpha * margins(softmax_probs(tr_logits), y)))
        reports.append(EvalReport(
            a_nat=a_nat, a_rob=a_rob,
            a_sa=weighted_mean(wv.raw, hits), a_tr=weighted_mean(tr_wv.raw, tr_hits),
            margin=marg, weight=wv.raw, normalized_weight=wv.normalized,
            ind_rob=hits, ind_sa=hits, ind_tr=tr_hits, adv_loss=adv_loss,
            config=dict(echo, alpha_eval=alpha),
            weight_tr=tr_wv.raw, normalized_weight_tr=tr_wv.normalized,
        ))
    return reports


def evaluate(model: MLP, testset: Dataset, attack_cfg: AttackConfig, alpha_eval: Optional[float] = None) -> EvalReport:
    return evaluate_many(model, testset, attack_cfg, [] if alpha_eval is None else [alpha_eval])[0]


def mc_sampled_accuracy(report: EvalReport, draws: int, seed: int = 0, metric: str = "sa") -> dict:
    """Monte-Carlo estimate: draw examples i.i.d. from the normalized weights, average indicators."""
    if draws < 1:
        raise DomainError("draws must be >= 1")
    if metric == "sa":
        probs, ind = report.normalized_weight, report.ind_sa
    elif metric == "tr":
        probs, ind = report.normalized_weight_tr, report.ind_tr
    else:
        raise DomainError(f"metric must be 'sa' or 'tr', got {metric!r}")
    rng = np.random.default_rng(seed)
    p = np.asarray(probs, dtype=np.float64)
    idx = rng.choice(len(p), size=draws, p=p / p.sum())
    sample = np.asarray(ind, dtype=np.float64)[idx]
    stderr = float(sample.std(ddof=1) / math.sqrt(draws)) if draws > 1 else 0.0
    return {"estimate": float(sample.mean()), "stderr": stderr}


@dataclass(eq=False)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("bin_lo", "bin_hi", "count"))
            for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def weight_histogram(report, bins: int = 20) -> Histogram:
    """Counts of normalized weights in ``bins`` equal bins spanning [min, max]."""
    if bins < 1:
        raise DomainError("bins must be >= 1")
    values = report.normalized_weight if isinstance(report, EvalReport) else np.asarray(report, dtype=np.float64)
    counts, edges = np.histogram(values, bins=bins)
    return Histogram(edges, counts)


def weight_spread(report) -> float:
    values = report.normalized_weight if isinstance(report, EvalReport) else np.asarray(report)
    return float(np.max(values) - np.min(values))


def adversarial_losses(model: MLP, testset: Dataset, attack_cfg: AttackConfig):
    """Per-example loss at the attacked points and the correctness indicator there.

    The loss is the attack's own objective: cross-entropy for ``ce`` and
    ``weighted-ce`` attacks, the logit margin for ``margin`` attacks.
    """
    logits, hits = _attacked(model, testset, attack_cfg)
    spec = LOGIT_MARGIN if attack_cfg.flavor == "margin" else CROSS_ENTROPY
    return per_example_loss(logits, testset.labels, spec), hits
