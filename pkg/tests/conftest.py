import functools
import os

import pytest
from hypothesis import settings

from hyposde import Dataset, FhnParams, downsample, fhn_model, simulate

settings.register_profile("repro", deadline=None, derandomize=True)
settings.load_profile("repro")

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")

SET1 = FhnParams(gamma=1.5, beta=0.3, epsilon=0.1, sigma=0.6, s=0.01)
SET2 = FhnParams(gamma=1.2, beta=1.3, epsilon=0.1, sigma=0.4, s=0.01)


@pytest.fixture(scope="session")
def fhn():
    return fhn_model(s=0.01)


@pytest.fixture(scope="session")
def set1():
    return SET1


@pytest.fixture(scope="session")
def set2():
    return SET2


@functools.lru_cache(maxsize=None)
def _dataset_set1(seed: int, n: int, delta: float) -> Dataset:
    model = fhn_model(s=0.01)
    traj = simulate(model, SET1.drift_params(), SET1.diffusion(), (0.0, 0.0), delta, n, seed)
    return Dataset(traj, model)


@pytest.fixture(scope="session")
def dataset_set1():
    """One observation-resolution dataset (delta 0.01, 20000 transitions)."""
    return _dataset_set1(101, 20000, 0.01)


@pytest.fixture(scope="session")
def dataset_set1_downsampled():
    """One replication of the reference design: fine step 0.001 downsampled
    by 10 to 50000 observations at step 0.01."""
    model = fhn_model(s=0.01)
    fine = simulate(model, SET1.drift_params(), SET1.diffusion(), (0.0, 0.0), 0.001, 500000, 7)
    return Dataset(downsample(fine, 10), model)


def dataset_for_seed(seed: int, n: int = 50000, delta: float = 0.01) -> Dataset:
    return _dataset_set1(seed, n, delta)
