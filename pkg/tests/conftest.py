"""
Shared fixtures: a small synthetic world, its split and fresh models.
"""

import numpy as np
import pytest

from core.box_geometry import GumbelTemps
from core.experiment import entity_counts
from core.models import ModelConfig, init_model
from core.splitter import SplitConfig, build_split
from core.synthetic import synthetic_generate


SMALL_WORLD = dict(n_users=80, n_items=200, n_attributes=20, latent_dim=3, seed=3)


@pytest.fixture(scope="session")
def small_world():
    return synthetic_generate(**SMALL_WORLD)


@pytest.fixture(scope="session")
def small_split_config():
    return SplitConfig(max_sample_size=300, epsilon_mode="fixed", epsilon_fixed=2, alpha=0.5, seed=11)


@pytest.fixture(scope="session")
def small_split(small_world, small_split_config):
    return build_split(small_world.d_u, small_world.d_a, small_split_config, filter_counts=None)


@pytest.fixture
def box_model(small_split):
    config = ModelConfig(family="box", dim=4, temps=GumbelTemps(0.1, 0.1), seed=5)
    return init_model(config, entity_counts(small_split))


@pytest.fixture
def mf_model(small_split):
    config = ModelConfig(family="mf", dim=8, seed=5)
    return init_model(config, entity_counts(small_split))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
