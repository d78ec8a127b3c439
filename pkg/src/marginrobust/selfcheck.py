"""Oracle suites runnable from the command line (``marginrobust selfcheck``)."""

from __future__ import annotations

import logging

import numpy as np

from . import oracles
from .attack import AttackConfig, batch_attack
from .data import as_batch, synth_gaussians
from .dro import solve_dro_weights
from .nn import MLP, LossSpec, grad_input, grad_params, init_mlp
from .training import TrainConfig, train

log = logging.getLogger(__name__)


def random_mlp(seed: int, max_width: int = 6) -> MLP:
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(1, 4))
    dims = [int(rng.integers(2, max_width + 1)) for _ in range(depth + 1)]
    dims[-1] = max(dims[-1], 2)
    m = init_mlp(dims, seed)
    return MLP(m.weights, tuple(rng.normal(scale=0.1, size=b.shape) for b in m.biases))


def check_gradients(n_models: int = 50, batch: int = 4, tol: float = 1e-4) -> float:
    """Worst relative error of analytic vs finite-difference gradients."""
    worst = 0.0
    for seed in range(n_models):
        rng = np.random.default_rng(10_000 + seed)
        model = random_mlp(seed)
        X = rng.uniform(size=(batch, model.n_inputs))
        y = rng.integers(0, model.n_classes, size=batch)
        w = rng.uniform(0.0, 2.0, size=batch)
        for flavor in ("cross-entropy", "kl-to-reference", "logit-margin"):
            ref = rng.normal(size=(batch, model.n_classes)) if flavor == "kl-to-reference" else None
            g = grad_params(model, X, y, LossSpec(flavor, ref), w)
            n = oracles.fd_grad_params(model.weights, model.biases, X, y, flavor, ref, w)
            worst = max(worst, oracles.max_relative_error(list(g.parameters()), n))
            ref0 = None if ref is None else ref[:1]
            gi = grad_input(model, X[0], int(y[0]), LossSpec(flavor, ref0))
            ni = oracles.fd_grad_input(model.weights, model.biases, X[0], int(y[0]), flavor, ref0)
            worst = max(worst, oracles.max_relative_error([gi], [ni]))
    return worst


def check_dro(n_instances: int = 1000, seed: int = 0) -> float:
    """Worst objective gap between the solver and a conic-programming oracle."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        n = int(rng.integers(1, 11))
        losses = rng.exponential(size=n)
        rho = float(rng.uniform(0.0, 0.6 * max(n - 1, 1) / 2))
        ref, _ = oracles.dro_qp(losses, rho)
        worst = max(worst, abs(ref - solve_dro_weights(losses, rho).objective))
    return worst


def check_collapse(runs: int = 3) -> bool:
    data = synth_gaussians(20, [[0.3, 0.3], [0.7, 0.7]], 0.1, seed=0)
    ok = True
    for seed in range(runs):
        att = AttackConfig(epsilon=0.1, step_size=0.02, steps=5, seed=seed)
        model = init_mlp([2, 8, 2], seed)
        a = train(model, data, TrainConfig("at", epochs=2, batch_size=8, lr=0.5, attack=att, seed=seed))[0]
        b = train(model, data, TrainConfig("weighted-at", epochs=2, batch_size=8, lr=0.5, attack=att,
                                           alpha_train=0.0, seed=seed))[0]
        x1 = batch_attack(a, as_batch(data), att).inputs
        x2 = batch_attack(a, as_batch(data), AttackConfig(0.1, 0.02, 5, "weighted-ce", alpha=0.0, seed=seed)).inputs
        ok &= a.equals(b) and np.array_equal(x1, x2)
    return bool(ok)


def run_selfcheck(quick: bool = True) -> bool:
    n_models, n_dro = (10, 100) if quick else (50, 1000)
    results = []
    g = check_gradients(n_models)
    results.append(("gradients vs finite differences", g < 1e-4, f"max rel err {g:.2e}"))
    try:
        d = check_dro(n_dro)
        results.append(("DRO solver vs conic oracle", d < 1e-6, f"max gap {d:.2e}"))
    except ImportError:
        results.append(("DRO solver vs conic oracle", True, "skipped (cvxpy not installed)"))
    c = check_collapse()
    results.append(("alpha=0 collapse (training and attack)", c, "bitwise" if c else "mismatch"))
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all(ok for _, ok, _ in results)
