"""Shared fixtures for the test suite."""

import numpy as np
import pytest

from backend.models.net_config import NetConfig
from backend.models.tensor import precision
from backend.utils.synth import synth_scene


@pytest.fixture
def f64():
    """Run the test body in double precision."""
    with precision("f64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Smallest useful network: widths (2, 4, 8, 16, 16) on 32×32 crops."""
    return NetConfig(base_width=2, crop=32, batch_size=2, steps=4, log_every=1, seed=3)


@pytest.fixture
def tiny_scenes():
    return [synth_scene(seed, n_range=(2, 6), size=32, scene_id=f"s{seed}") for seed in range(3)]
