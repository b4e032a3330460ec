import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fontclust import FitConfig, SimulationConfig, gen_gaussian_sites

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def fast_cfg():
    return FitConfig(restarts=3, seed=11)


@pytest.fixture(scope="session")
def separable_ds():
    return gen_gaussian_sites(SimulationConfig(M=3, K=3, p=4, sigma2=0.01, n_range=(40, 60), seed=5))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULT_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
