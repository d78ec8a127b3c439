import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marginrobust import oracles
from marginrobust.attack import (AttackConfig, attack_inputs, batch_attack, initial_noise, margin_pgd, pgd,
                                 project, weighted_pgd)
from marginrobust.data import Batch, as_batch
from marginrobust.evaluation import eval_robust
from marginrobust.exceptions import ConfigurationError
from marginrobust.nn import MLP, forward, init_mlp, softmax_probs
from marginrobust.selfcheck import random_mlp
from marginrobust.weighting import margins


def linear(w, b=None):
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    return MLP((w,), (np.zeros(w.shape[0]) if b is None else np.asarray(b, dtype=np.float64),))


FLAVORS = [dict(flavor="ce"), dict(flavor="weighted-ce", alpha=1.0), dict(flavor="margin"),
           dict(flavor="margin", margin_space="prob"), dict(flavor="weighted-ce", alpha=2.0, weight_gradient=True)]


def test_config_validation():
    with pytest.raises(ConfigurationError):
        AttackConfig(flavor="fgsm")
    with pytest.raises(ConfigurationError):
        AttackConfig(flavor="weighted-ce")
    with pytest.raises(ConfigurationError):
        AttackConfig(steps=0)
    with pytest.raises(ConfigurationError):
        AttackConfig(step_size=0.0)
    with pytest.warns(UserWarning):
        AttackConfig(epsilon=0.01, step_size=0.1)


def test_flavor_guards():
    m = init_mlp([2, 2], 0)
    with pytest.raises(ConfigurationError):
        pgd(m, [0.5, 0.5], 0, AttackConfig(flavor="margin"))
    with pytest.raises(ConfigurationError):
        weighted_pgd(m, [0.5, 0.5], 0, AttackConfig())
    with pytest.raises(ConfigurationError):
        margin_pgd(m, [0.5, 0.5], 0, AttackConfig())


def test_zero_gradient_network_only_adds_noise():
    m = init_mlp([5, 4, 3], 0).scaled(0.0)
    x = np.full(5, 0.5)
    cfg = AttackConfig(epsilon=0.3, step_size=0.01, steps=1, seed=4)
    expected = project(x + 0.001 * initial_noise([0], 5, 4)[0], x, 0.3)
    # zero logits give a nonzero CE input-gradient of exactly zero, so sign(0) = 0 and nothing moves
    assert np.array_equal(pgd(m, x, 1, cfg), expected)
    assert np.array_equal(margin_pgd(m, x, 1, AttackConfig(0.3, 0.01, 1, "margin", seed=4)), expected)
    assert np.max(np.abs(expected - x)) <= 0.3


def test_linear_one_dimensional_sign():
    m = linear([[2.0], [0.0]])
    cfg = AttackConfig(epsilon=0.1, step_size=0.01, steps=1, init_noise_scale=0.0)
    x_adv = pgd(m, [0.5], 1, cfg)
    assert x_adv[0] == pytest.approx(0.51, abs=1e-15)
    fd = oracles.fd_grad_input(m.weights, m.biases, [0.5], 1)
    assert np.sign(fd[0]) == 1.0


def test_box_and_ball_projection():
    assert project(np.array([1.15]), np.array([0.9]), 0.1)[0] == 1.0
    assert project(np.array([0.5]), np.array([0.9]), 0.1)[0] == pytest.approx(0.8)


def test_margin_attack_on_linear_model_moves_along_runner_up_difference():
    w = np.array([[1.0, -2.0, 0.5], [0.3, 0.4, -1.0], [-0.5, 1.0, 2.0]])
    m = linear(w, [0.2, 0.0, -0.1])
    x = np.array([0.5, 0.5, 0.5])
    z = forward(m, x)[0]
    y = 0
    t = 1 + int(np.argmax(z[1:]))
    cfg = AttackConfig(epsilon=0.1, step_size=0.01, steps=1, flavor="margin", init_noise_scale=0.0)
    assert np.allclose(margin_pgd(m, x, y, cfg) - x, 0.01 * np.sign(w[t] - w[y]), atol=1e-15)


def test_alpha_zero_weighted_pgd_is_bitwise_pgd():
    for seed in range(10):
        m = random_mlp(seed)
        r = np.random.default_rng(seed)
        X = r.uniform(size=(6, m.n_inputs))
        y = r.integers(0, m.n_classes, 6)
        base = dict(epsilon=0.2, step_size=0.03, steps=12, seed=seed)
        a = attack_inputs(m, X, y, AttackConfig(**base))
        b = attack_inputs(m, X, y, AttackConfig(**base, flavor="weighted-ce", alpha=0.0))
        assert np.array_equal(a, b)


def test_weighted_direction_matches_pgd_under_detached_weight(trained_toy, blobs):
    # a positive per-example scale leaves the sign of the gradient unchanged
    X, y = blobs.features[:40], blobs.labels[:40]
    for steps in (1, 10):
        a = attack_inputs(trained_toy, X, y, AttackConfig(0.1, 0.02, steps, seed=3))
        b = attack_inputs(trained_toy, X, y, AttackConfig(0.1, 0.02, steps, "weighted-ce", alpha=2.0, seed=3))
        assert np.array_equal(a, b)


def test_weighted_trace_matches_independent_forward_pass():
    m = MLP(init_mlp([3, 5, 2], 6).weights, (np.full(5, 0.1), np.array([0.2, -0.1])))
    x = np.array([0.2, 0.7, 0.4])
    alpha = 1.5
    trace = []
    weighted_pgd(m, x, 1, AttackConfig(0.2, 0.02, 8, "weighted-ce", alpha=alpha, seed=1), trace=trace)
    assert len(trace) == 8
    for iterate, s in trace:
        z = oracles.dense_forward(m.weights, m.biases, iterate[0]).astype(np.float64)
        p = np.exp(z - z.max())
        p /= p.sum()
        assert s[0] == pytest.approx(np.exp(-alpha * (p[1] - p[0])), rel=1e-12)


def test_weight_gradient_option_changes_trajectory():
    # with two classes s and l are monotone in the same logit gap, so only C > 2 can differ
    m = init_mlp([6, 12, 4], 2)
    r = np.random.default_rng(0)
    X, y = r.uniform(size=(40, 6)), r.integers(0, 4, 40)
    a = attack_inputs(m, X, y, AttackConfig(0.2, 0.02, 10, "weighted-ce", alpha=3.0, seed=0))
    b = attack_inputs(m, X, y, AttackConfig(0.2, 0.02, 10, "weighted-ce", alpha=3.0, seed=0, weight_gradient=True))
    assert not np.array_equal(a, b)


@pytest.mark.parametrize("eps", [0.1, 0.3])
@pytest.mark.parametrize("steps", [1, 10, 40])
@pytest.mark.parametrize("extra", FLAVORS)
def test_feasibility(eps, steps, extra):
    m = random_mlp(steps + int(eps * 10))
    r = np.random.default_rng(steps)
    X = r.uniform(size=(20, m.n_inputs))
    X[:5] = r.integers(0, 2, size=(5, m.n_inputs))  # corners exercise the box clip
    y = r.integers(0, m.n_classes, 20)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = AttackConfig(epsilon=eps, step_size=0.05, steps=steps, seed=1, **extra)
    out = attack_inputs(m, X, y, cfg)
    assert np.max(np.abs(out - X)) <= eps + 1e-12
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_determinism():
    m = random_mlp(21)
    X = np.random.default_rng(0).uniform(size=(5, m.n_inputs))
    y = np.zeros(5, dtype=int)
    cfg = AttackConfig(0.2, 0.02, 15, seed=9)
    assert np.array_equal(attack_inputs(m, X, y, cfg), attack_inputs(m, X, y, cfg))
    # a single step keeps the seeded start visible
    one = AttackConfig(0.2, 0.02, 1, seed=9)
    assert not np.array_equal(attack_inputs(m, X, y, one), attack_inputs(m, X, y, AttackConfig(0.2, 0.02, 1, seed=10)))


def test_single_example_batch_matches_scalar_call():
    m = random_mlp(8)
    r = np.random.default_rng(1)
    X = r.uniform(size=(4, m.n_inputs))
    y = r.integers(0, m.n_classes, 4)
    cfg = AttackConfig(0.2, 0.02, 10, seed=2)
    for i in range(4):
        one = batch_attack(m, Batch(X[i:i + 1], y[i:i + 1], np.array([i])), cfg).inputs[0]
        assert np.array_equal(one, pgd(m, X[i], int(y[i]), cfg, index=i))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_permuting_a_batch_permutes_its_outputs(seed):
    m = random_mlp(seed % 30)
    r = np.random.default_rng(seed)
    X = r.uniform(size=(9, m.n_inputs))
    y = r.integers(0, m.n_classes, 9)
    perm = r.permutation(9)
    cfg = AttackConfig(0.15, 0.02, 5, seed=seed)
    whole = batch_attack(m, Batch(X, y, np.arange(9)), cfg).inputs
    shuffled = batch_attack(m, Batch(X[perm], y[perm], perm), cfg).inputs
    assert np.array_equal(whole[perm], shuffled)


def test_margin_attack_beats_random_noise(trained_toy, blobs_test):
    X, y = blobs_test.features, blobs_test.labels
    noise = np.clip(X + 0.1 * np.sign(np.random.default_rng(0).standard_normal(X.shape)), 0, 1)
    noise_err = np.mean(forward(trained_toy, noise).argmax(axis=1) != y)
    adv = attack_inputs(trained_toy, X, y, AttackConfig(0.1, 0.02, 10, "margin", seed=0))
    assert np.mean(forward(trained_toy, adv).argmax(axis=1) != y) >= noise_err


def test_attack_lowers_margins(trained_toy, blobs_test):
    X, y = blobs_test.features, blobs_test.labels
    adv = attack_inputs(trained_toy, X, y, AttackConfig(0.1, 0.02, 10, seed=0))
    before = margins(softmax_probs(forward(trained_toy, X)), y)
    after = margins(softmax_probs(forward(trained_toy, adv)), y)
    assert after.mean() < before.mean()


def test_robust_accuracy_nonincreasing_in_epsilon(trained_toy, blobs_test):
    accs = [eval_robust(trained_toy, blobs_test, AttackConfig(eps, 0.01, 20, seed=0)) for eps in (0.05, 0.1, 0.2, 0.3)]
    for a, b in zip(accs, accs[1:]):
        assert b <= a + 0.01, accs


def test_batch_attack_keeps_labels_and_indices(blobs, small_attack):
    b = as_batch(blobs.take(range(5)))
    out = batch_attack(init_mlp([2, 3, 2], 0), b, small_attack)
    assert np.array_equal(out.labels, b.labels) and np.array_equal(out.indices, b.indices)
