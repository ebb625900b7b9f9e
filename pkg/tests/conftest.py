import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from localsgd.data import Dataset, make_sparse_binary, make_two_class_2d

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def sparse_small():
    return make_sparse_binary(n=256, d=20, density=0.3, seed=3)


@pytest.fixture(scope="session")
def moons():
    return make_two_class_2d(n=400, seed=0)


def random_dataset(rng: np.random.Generator, n: int, d: int, density: float = 0.5) -> Dataset:
    X = rng.standard_normal((n, d)) * (rng.random((n, d)) < density)
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return Dataset.from_dense(X, y)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
