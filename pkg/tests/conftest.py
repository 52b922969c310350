import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from glam.synthetic import make_synthetic_dataset, make_toy_separable

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

FIXTURES = Path(__file__).parent / "fixtures"

# property tests that must see at least this many randomized cases
MANY = settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@pytest.fixture
def tiny3_dir():
    return FIXTURES / "tiny3"


@pytest.fixture(scope="session")
def toy():
    return make_toy_separable()


@pytest.fixture(scope="session")
def small():
    return make_synthetic_dataset(n=160, d=60, num_classes=3, train_per_class=8, num_val=40, num_test=60, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
SOME = settings(max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
