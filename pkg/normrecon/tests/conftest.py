import numpy as np
import pytest

from normrecon.models.report import Algorithm, ExperimentConfig, SGDConfig
from normrecon.services.netmodel import sample_lowrank_target, sample_target


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def target4():
    """Width-4 target with two layers."""
    return sample_target(4, 2, seed=11)


@pytest.fixture
def target8():
    """Width-8 target with two layers."""
    return sample_target(8, 2, seed=5)


@pytest.fixture
def rank1_target():
    return sample_lowrank_target(4, 1, 1, seed=3)


@pytest.fixture
def tiny_experiment():
    """A sweep small enough to run in a few seconds."""
    return ExperimentConfig(
        teacher_width=3,
        n_train=200,
        n_test=200,
        sgd=SGDConfig(learning_rate=0.01, batch_size=32, epochs=2),
        seeds=[0, 1, 2],
        algorithms=list(Algorithm),
        record_wall_time=False,
    )
