import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def unit_vectors():
    """Hypothesis strategy for unit 3-vectors built from bounded components."""
    comp = st.floats(-1.0, 1.0, allow_nan=False)
    return (st.tuples(comp, comp, comp)
            .filter(lambda v: np.linalg.norm(v) > 1e-3)
            .map(lambda v: np.asarray(v) / np.linalg.norm(v)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
