import numpy as np
import pytest

from aimlab.env import synthetic_glyphs
from aimlab.trainer import TrainConfig, train, train_baseline
from aimlab.vqvae import VQConfig, pretrain

SEEDS = (0, 1, 2, 3, 4)

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture(scope="session")
def glyphs():
    return synthetic_glyphs(1000, seed=0)


@pytest.fixture(scope="session")
def pretrained(glyphs):
    return pretrain(glyphs, VQConfig())


@pytest.fixture(scope="session")
def aim_runs(glyphs, pretrained):
    model = pretrained.model
    return {s: train(TrainConfig(seed=s), glyphs, model.encode, pretrained.codebook) for s in SEEDS}


@pytest.fixture(scope="session")
def baseline_runs(glyphs):
    return {s: train_baseline(TrainConfig(seed=s), glyphs) for s in SEEDS}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
