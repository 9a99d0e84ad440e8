import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("ci", max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("dev", max_examples=10, deadline=None)
settings.register_profile("thorough", max_examples=300, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


def random_spd(rng, d, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    ev = np.linspace(1.0, cond, d)
    a = (q * ev) @ q.T
    return 0.5 * (a + a.T)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def model20():
    from normgrad.harness import synth_model
    return synth_model(20, 1.0, 10.0, 0)


@pytest.fixture(scope="session")
def model5():
    from normgrad.harness import synth_model
    return synth_model(5, 1.0, 4.0, 3)
