import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES: list[str] = []


def binomial_interval(n: int, p: float, z: float = 3.891) -> tuple[float, float]:
    """Two-sided ~99.99% normal interval for a Binomial(n, p) count."""
    mu = n * p
    sd = (n * p * (1 - p)) ** 0.5
    return mu - z * sd, mu + z * sd


@pytest.fixture
def rng_np():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
