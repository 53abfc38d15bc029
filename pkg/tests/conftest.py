import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sngp.linalg import Rng

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return Rng(1234)


def random_probs(g: np.random.Generator, n: int, k: int) -> np.ndarray:
    z = g.normal(size=(n, k)) * 2
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)
