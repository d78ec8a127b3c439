"""``marginrobust`` command line: train, evaluate, dro, sweep, selfcheck.

Exit codes: 0 success, 1 configuration error, 2 runtime error (I/O, data).
Outputs are deterministic functions of the config; wall-clock information is
kept in a separate ``run_meta.json`` sidecar.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, _floats, load_config
from .data import Dataset, load_csv, load_mnist_idx, subsample, synth_gaussians
from .dro import dro_curve, write_curve_csv
from .evaluation import adversarial_losses, evaluate_many, mc_sampled_accuracy, weight_histogram
from .exceptions import ConfigurationError, IngestionError
from .nn import init_mlp, load_model, model_to_bytes, save_model
from .training import train

log = logging.getLogger("marginrobust")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def load_datasets(cfg: ExperimentConfig):
    d = cfg.values["data"]
    kind = d["kind"]
    if kind == "synthetic":
        centers = np.array([_floats(r) for r in d["synth_centers"].split(";") if r.strip()])
        n, sigma, seed = int(d["synth_n_per_class"]), float(d["synth_sigma"]), int(d["synth_seed"])
        train_set = synth_gaussians(n, centers, sigma, seed, name="synthetic-train")
        test_set = synth_gaussians(n, centers, sigma, seed + 1, name="synthetic-test")
    elif kind == "mnist-idx":
        paths = [cfg.resolve_path(d[k]) for k in ("train_images", "train_labels", "test_images", "test_labels")]
        for p in paths:
            if not p.is_file():
                raise IngestionError(f"dataset file not found: {p}")
        train_set = load_mnist_idx(paths[0], paths[1], name="mnist-train")
        test_set = load_mnist_idx(paths[2], paths[3], name="mnist-test")
    else:
        paths = [cfg.resolve_path(d[k]) for k in ("train_csv", "test_csv")]
        for p in paths:
            if not p.is_file():
                raise IngestionError(f"dataset file not found: {p}")
        train_set = load_csv(paths[0])
        test_set = load_csv(paths[1], class_count=train_set.class_count)
    seed = int(d["subsample_seed"])
    if int(d["n_train"]) > 0:
        train_set = subsample(train_set, int(d["n_train"]), seed)
    if int(d["n_test"]) > 0:
        test_set = subsample(test_set, int(d["n_test"]), seed)
    return train_set, test_set


def _prepare_output(cfg: ExperimentConfig) -> Path:
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.ini").write_text(cfg.to_text())
    return out


def _write_meta(out: Path, command: str, started: float, **extra) -> None:
    meta = {"command": command, "started": started, "finished": time.time(),
            "python": platform.python_version(), "version": __version__}
    meta.update(extra)
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _atomic_write(path: Path, blob: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def _fit(cfg: ExperimentConfig, train_set: Dataset, **train_overrides):
    dims = [train_set.n_features] + cfg.hidden + [train_set.class_count]
    model = init_mlp(dims, int(cfg.get("model", "init_seed")))
    return train(model, train_set, cfg.train_config(**train_overrides))


def _check_model(model, data: Dataset):
    if model.n_inputs != data.n_features or model.n_classes != data.class_count:
        raise ConfigurationError(
            f"model dims {model.dims} do not match data ({data.n_features} features, {data.class_count} classes)"
        )


def cmd_train(cfg: ExperimentConfig) -> Path:
    started = time.time()
    train_set, _ = load_datasets(cfg)
    out = _prepare_output(cfg)
    model, train_log = _fit(cfg, train_set)
    save_model(model, out / "model.bin")
    train_log.to_csv(out / "train_log.csv")
    _write_meta(out, "train", started)
    log.info("wrote %s", out / "model.bin")
    return out


def _alpha_tag(alpha: float) -> str:
    return f"alpha{alpha:g}"


def cmd_evaluate(cfg: ExperimentConfig, model_path) -> Path:
    started = time.time()
    _, test_set = load_datasets(cfg)
    model = load_model(model_path)
    _check_model(model, test_set)
    out = _prepare_output(cfg)
    alphas = cfg.alpha_eval
    reports = evaluate_many(model, test_set, cfg.attack_config(), alphas)
    bins = int(cfg.get("eval", "histogram_bins"))
    draws = int(cfg.get("eval", "mc_draws"))
    summary = []
    for report in reports:
        alpha = report.config["alpha_eval"]
        tag = "unweighted" if alpha is None else _alpha_tag(alpha)
        if draws > 0 and alpha is not None:
            report.config["mc"] = mc_sampled_accuracy(report, draws, int(cfg.get("eval", "mc_seed")))
        report.to_json(out / f"eval_{tag}.json")
        report.to_csv(out / f"eval_{tag}_examples.csv")
        if alpha is not None:
            weight_histogram(report, bins).to_csv(out / f"hist_{tag}.csv")
        summary.append(dict(report.metrics(), alpha_eval=alpha))
    with open(out / "eval_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("alpha_eval", "a_nat", "a_rob", "a_sa", "a_tr"))
        for s in summary:
            w.writerow(["" if s["alpha_eval"] is None else repr(s["alpha_eval"])] +
                       [repr(s[k]) if k in s else "" for k in ("a_nat", "a_rob", "a_sa", "a_tr")])
    _write_meta(out, "evaluate", started, model=str(model_path))
    return out


def cmd_dro(cfg: ExperimentConfig, model_path) -> Path:
    started = time.time()
    _, test_set = load_datasets(cfg)
    model = load_model(model_path)
    _check_model(model, test_set)
    out = _prepare_output(cfg)
    flavor = cfg.get("dro", "flavor")
    losses, hits = adversarial_losses(model, test_set, cfg.attack_config(flavor=flavor))
    write_curve_csv(dro_curve(losses, hits, cfg.rhos), out / f"dro_curve_{flavor}.csv")
    _write_meta(out, "dro", started, model=str(model_path))
    return out


SWEEP_COLUMNS = ("alpha_train", "alpha_eval", "epsilon", "a_nat", "a_rob", "a_sa", "a_tr", "model_hash", "status")


def cmd_sweep(cfg: ExperimentConfig) -> Path:
    started = time.time()
    alpha_trains = _floats(cfg.get("sweep", "alpha_train"))
    alpha_evals = _floats(cfg.get("sweep", "alpha_eval"))
    epsilons = _floats(cfg.get("sweep", "epsilon"))
    if not (alpha_trains and alpha_evals and epsilons):
        raise ConfigurationError("sweep grids must be nonempty")
    regime = cfg.get("sweep", "regime")
    train_set, test_set = load_datasets(cfg)
    out = _prepare_output(cfg)
    cache = out / "cache"
    cache.mkdir(exist_ok=True)
    rows, hits = [], 0
    for eps in epsilons:
        for a_train in alpha_trains:
            key = cfg.training_hash(regime=regime, alpha_train=a_train, epsilon=eps)
            path = cache / f"{key}.bin"
            try:
                if path.exists():
                    model = load_model(path)
                    hits += 1
                else:
                    overrides = dict(regime=regime, attack=cfg.attack_config(epsilon=eps))
                    if regime.startswith("weighted"):
                        overrides["alpha_train"] = a_train
                    model, _ = _fit(cfg, train_set, **overrides)
                    _atomic_write(path, model_to_bytes(model))
                reports = evaluate_many(model, test_set, cfg.attack_config(epsilon=eps), alpha_evals)
                for r in reports:
                    rows.append([a_train, r.config["alpha_eval"], eps, r.a_nat, r.a_rob, r.a_sa, r.a_tr, key, "ok"])
            except Exception as exc:  # a failing cell must not abort the sweep
                log.error("sweep cell alpha_train=%s epsilon=%s failed: %s", a_train, eps, exc)
                for a_eval in alpha_evals:
                    rows.append([a_train, a_eval, eps, "", "", "", "", key, f"error: {exc}"])
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    _write_meta(out, "sweep", started, cache_hits=hits)
    return out


def cmd_selfcheck(quick: bool = True) -> bool:
    from .selfcheck import run_selfcheck
    return run_selfcheck(quick=quick)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="marginrobust", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("train", "sweep"):
        s = sub.add_parser(name)
        s.add_argument("config")
    for name in ("evaluate", "dro"):
        s = sub.add_parser(name)
        s.add_argument("config")
        s.add_argument("model")
    s = sub.add_parser("selfcheck", help="run the gradient, DRO and collapse oracles")
    s.add_argument("--full", action="store_true", help="use the full trial counts")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "selfcheck":
            return EXIT_OK if cmd_selfcheck(quick=not args.full) else EXIT_RUNTIME
        cfg = load_config(args.config)
        if args.command == "train":
            cmd_train(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.model)
        elif args.command == "dro":
            cmd_dro(cfg, args.model)
        else:
            cmd_sweep(cfg)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IngestionError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
