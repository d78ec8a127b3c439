"""Experiment configuration: one INI-style ``key = value`` file, one section per concern.

Every key has a default (see ``DEFAULTS``); unknown sections or keys are
rejected before any computation starts.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List

from .attack import AttackConfig
from .exceptions import ConfigurationError
from .training import TrainConfig

OUTPUT_ROOT_ENV = "MARGINROBUST_OUTPUT_ROOT"

DEFAULTS: Dict[str, Dict[str, str]] = {
    "data": {
        "kind": "synthetic",            # synthetic | mnist-idx | csv
        "train_images": "",
        "train_labels": "",
        "test_images": "",
        "test_labels": "",
        "train_csv": "",
        "test_csv": "",
        "n_train": "0",                 # 0 keeps every example
        "n_test": "0",
        "subsample_seed": "0",
        "synth_n_per_class": "200",
        "synth_centers": "0.25,0.25; 0.75,0.75",
        "synth_sigma": "0.05",
        "synth_seed": "0",
    },
    "model": {
        "hidden": "256,128",
        "init_seed": "0",
    },
    "train": {
        "regime": "at",
        "epochs": "15",
        "batch_size": "128",
        "lr": "0.1",
        "alpha_train": "0.5",
        "lambda_inv": "6.0",
        "combine_lambda": "1.0",
        "seed": "0",
        "trades_weight_scope": "loss",
    },
    "attack": {
        "epsilon": "0.3",
        "step_size": "0.01",
        "steps": "10",
        "init_noise_scale": "0.001",
        "seed": "0",
        "margin_space": "logit",
        "weight_gradient": "false",
    },
    "eval": {
        "alpha_eval": "0.5, 1.0, 1.5, 2.0",
        "histogram_bins": "20",
        "mc_draws": "0",
        "mc_seed": "0",
    },
    "dro": {
        "flavor": "ce",
        "rhos": "0.01, 0.02, 0.04, 0.08, 0.16, 0.32, 0.64, 1.0",
    },
    "sweep": {
        "regime": "weighted-at",
        "alpha_train": "0.0, 0.5",
        "alpha_eval": "0.5, 1.0, 2.0",
        "epsilon": "0.3",
    },
    "output": {
        "dir": "runs/default",
    },
}


def _floats(text: str) -> List[float]:
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _ints(text: str) -> List[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    values: Dict[str, Dict[str, str]]
    source: Path | None = None

    def get(self, section: str, key: str) -> str:
        return self.values[section][key]

    # typed views ------------------------------------------------------------

    @property
    def hidden(self) -> List[int]:
        return _ints(self.get("model", "hidden"))

    def attack_config(self, **overrides) -> AttackConfig:
        a = self.values["attack"]
        kw = dict(epsilon=float(a["epsilon"]), step_size=float(a["step_size"]), steps=int(a["steps"]),
                  init_noise_scale=float(a["init_noise_scale"]), seed=int(a["seed"]),
                  margin_space=a["margin_space"], weight_gradient=_bool(a["weight_gradient"]))
        kw.update(overrides)
        return AttackConfig(**kw)

    def train_config(self, **overrides) -> TrainConfig:
        t = self.values["train"]
        regime = overrides.pop("regime", t["regime"])
        attack = overrides.pop("attack", self.attack_config())
        kw = dict(regime=regime, epochs=int(t["epochs"]), batch_size=int(t["batch_size"]), lr=float(t["lr"]),
                  attack=attack, seed=int(t["seed"]), trades_weight_scope=t["trades_weight_scope"])
        if regime.startswith("weighted"):
            kw["alpha_train"] = float(t["alpha_train"])
        if regime.endswith("trades"):
            kw["lambda_inv"] = float(t["lambda_inv"])
        if regime == "combined":
            kw["combine_lambda"] = float(t["combine_lambda"])
        kw.update(overrides)
        return TrainConfig(**kw)

    @property
    def alpha_eval(self) -> List[float]:
        return _floats(self.get("eval", "alpha_eval"))

    @property
    def rhos(self) -> List[float]:
        return _floats(self.get("dro", "rhos"))

    def output_dir(self) -> Path:
        d = Path(self.get("output", "dir"))
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not d.is_absolute():
            return Path(root) / d
        if not d.is_absolute() and self.source is not None:
            return self.source.parent / d
        return d

    def resolve_path(self, text: str) -> Path:
        p = Path(text)
        if not p.is_absolute() and self.source is not None:
            p = self.source.parent / p
        return p

    # serialization ----------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for section, items in self.values.items():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in items.items())
            lines.append("")
        return "\n".join(lines)

    def training_hash(self, **extra) -> str:
        """Content hash of every setting that influences a trained model."""
        keys = {s: self.values[s] for s in ("data", "model", "train", "attack")}
        keys["extra"] = {k: str(v) for k, v in sorted(extra.items())}
        return hashlib.sha256(json.dumps(keys, sort_keys=True).encode()).hexdigest()[:16]

    def validate(self) -> None:
        """Parse every typed field once so that bad values fail up front."""
        try:
            self.hidden
            self.alpha_eval
            self.rhos
            _floats(self.get("sweep", "alpha_train"))
            _floats(self.get("sweep", "alpha_eval"))
            _floats(self.get("sweep", "epsilon"))
            d = self.values["data"]
            for k in ("n_train", "n_test", "subsample_seed", "synth_n_per_class", "synth_seed"):
                int(d[k])
            float(d["synth_sigma"])
            _floats(d["synth_centers"])
            int(self.get("model", "init_seed"))
            int(self.get("eval", "histogram_bins"))
            int(self.get("eval", "mc_draws"))
            int(self.get("eval", "mc_seed"))
            self.train_config()
            if self.get("dro", "flavor") not in ("ce", "margin"):
                raise ConfigurationError("dro.flavor must be 'ce' or 'margin'")
            if d["kind"] not in ("synthetic", "mnist-idx", "csv"):
                raise ConfigurationError(f"unknown data.kind {d['kind']!r}")
            self.train_config(regime=self.get("sweep", "regime"))
        except ValueError as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(str(exc)) from exc


def parse_config(text: str, source: Path | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse config: {exc}") from exc
    values = {s: dict(items) for s, items in DEFAULTS.items()}
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigurationError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in DEFAULTS[section]:
                raise ConfigurationError(f"unknown key {key!r} in section [{section}]")
            values[section][key] = value.strip()
    cfg = ExperimentConfig(values, source)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path)
