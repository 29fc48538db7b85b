import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_hermitian(rng, n, m=None, pd=False):
    shape = (n, n) if m is None else (m, n, n)
    a = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    if pd:
        return a @ np.conj(np.swapaxes(a, -1, -2)) + n * np.eye(n)
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criterion outcomes, filled by tests/test_acceptance.py
CRITERIA: dict = {}


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for key in sorted(CRITERIA, key=lambda k: (int(k.rstrip("abc")), k)):
            terminalreporter.write_line(f"CRITERION {key}: {CRITERIA[key]}")
