import numpy as np
import pytest
import torch

from vinenav.world import generate_world, test_world_config, train_world_config

torch.set_num_threads(2)


@pytest.fixture(scope="session")
def train_world():
    return generate_world(train_world_config(), seed=7)


@pytest.fixture(scope="session")
def test_world():
    return generate_world(test_world_config(), seed=3)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
