import numpy as np
import pytest

from noisyfed import derive_constants, make_task


@pytest.fixture(scope="session")
def small_task():
    """Six clients, six dimensions: big enough to be non-trivial, cheap enough
    for exhaustive oracles."""
    return make_task(n_clients=6, dim=6, samples_per_client=12,
                     heterogeneity=1.0, ridge=0.1, noise_std=4.0, seed=5)


@pytest.fixture(scope="session")
def small_constants(small_task):
    return derive_constants(small_task, batch=3, trajectory_radius=8.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
