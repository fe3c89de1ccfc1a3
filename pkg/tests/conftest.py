"""
Shared fixtures: seeded streams, tiny generator / training configs and
small rendered datasets.
"""

import numpy as np
import pytest

from src.config import GeneratorConfig, TrainConfig
from src.capture.dataset import write_dataset
from src.capture.synthgen import render_dataset
from src.ndarr.rng import RngStream


@pytest.fixture
def rng():
    return RngStream(42)


@pytest.fixture
def np_rng():
    return np.random.default_rng(42)


def tiny_generator_config(**overrides) -> GeneratorConfig:
    values = dict(
        height=16,
        width=16,
        n0=5,
        train_live=4,
        train_print=2,
        train_replay=2,
        train_mask=2,
        test_live=2,
        test_print=1,
        test_replay=1,
        test_mask=1,
    )
    values.update(overrides)
    return GeneratorConfig(**values)


def tiny_train_config(**overrides) -> TrainConfig:
    values = dict(epochs=1, batch_size=4, stem_channels=8, seed=7, n0=5)
    values.update(overrides)
    return TrainConfig(**values)


@pytest.fixture
def tiny_generator():
    return tiny_generator_config()


@pytest.fixture
def tiny_train():
    return tiny_train_config()


@pytest.fixture(scope="session")
def tiny_samples():
    """15 rendered 16×16 captures (10 train, 5 test). Treat as read-only."""
    return render_dataset(tiny_generator_config(), split_seed=11)


@pytest.fixture
def train_samples(tiny_samples):
    return [s for s in tiny_samples if s.split == "train"]


@pytest.fixture
def test_samples(tiny_samples):
    return [s for s in tiny_samples if s.split == "test"]


@pytest.fixture
def dataset_dir(tmp_path, tiny_samples):
    out = tmp_path / "data"
    write_dataset(tiny_samples, str(out), tiny_generator_config())
    return out
