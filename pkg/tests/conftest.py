import logging

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from roughhurst.stats import PriceSeries

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# collected by tests/test_acceptance.py, printed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(autouse=True)
def _quiet_clamp_warnings():
    logging.getLogger("roughhurst").setLevel(logging.ERROR)
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def brownian_series(n: int, seed: int, sigma: float = 1.0) -> PriceSeries:
    delta = 1.0 / n
    dx = sigma * np.sqrt(delta) * np.random.default_rng(seed).standard_normal(n)
    return PriceSeries(np.concatenate([[0.0], np.cumsum(dx)]), delta)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
