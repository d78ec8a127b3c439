import numpy as np
import pytest

from marginrobust.attack import AttackConfig
from marginrobust.data import synth_gaussians
from marginrobust.nn import init_mlp
from marginrobust.training import TrainConfig, train


@pytest.fixture(scope="session")
def blobs():
    return synth_gaussians(60, [[0.3, 0.3], [0.7, 0.7]], 0.12, seed=0, name="blobs")


@pytest.fixture(scope="session")
def blobs_test():
    return synth_gaussians(60, [[0.3, 0.3], [0.7, 0.7]], 0.12, seed=1, name="blobs-test")


@pytest.fixture(scope="session")
def small_attack():
    return AttackConfig(epsilon=0.1, step_size=0.02, steps=10, seed=0)


@pytest.fixture(scope="session")
def trained_toy(blobs, small_attack):
    """A 2-16-2 net adversarially trained on the blobs (a few seconds)."""
    cfg = TrainConfig("at", epochs=10, batch_size=16, lr=0.5, attack=small_attack, seed=0)
    model, _ = train(init_mlp([2, 16, 2], 0), blobs, cfg)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = []


@pytest.fixture(scope="session")
def verdict():
    """Record one acceptance line; the lines are echoed in the terminal summary."""
    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        _VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
