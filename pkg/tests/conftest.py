import numpy as np
import pytest
from hypothesis import settings

from skelsafe.config import ExperimentConfig
from skelsafe.model import ModelConfig
from skelsafe.skeldata import generate_domain, source_spec, style_shift_spec

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_config():
    return ModelConfig(n_classes=3, frames=2, d_joint=4, d_model=8, layers=1, heads=2, mlp_ratio=2, dropout=0.1)


@pytest.fixture(scope="session")
def small_source():
    spec = source_spec(n_classes=4, frames=4, seed=3)
    return spec, generate_domain(spec, 48)


@pytest.fixture(scope="session")
def small_style(small_source):
    spec = style_shift_spec(small_source[0], seed=4)
    return generate_domain(spec, 24)


def small_experiment(out) -> ExperimentConfig:
    """A full pipeline at toy scale: every step runs in seconds."""
    cfg = ExperimentConfig(seed=7, out=str(out))
    cfg.data.n_classes = 4
    cfg.data.frames = 4
    s = cfg.data.sizes
    s.source_train, s.source_val, s.source_test, s.style_shift, s.semantic_shift = 48, 16, 24, 40, 16
    cfg.model.d_joint, cfg.model.d_model, cfg.model.layers = 4, 8, 1
    cfg.train.epochs = 2
    cfg.adapt.n_labeled, cfg.adapt.epochs, cfg.adapt.seeds = 24, 2, 2
    cfg.adapt.val_fraction = 0.25
    cfg.uq.mc_passes = 3
    cfg.uq.ablation_passes = [1, 2, 3]
    cfg.uq.ensemble_k = 2
    cfg.corruption.sigmas = [0.0, 0.1]
    cfg.corruption.drops = [0, 2]
    return cfg.validate()
