import numpy as np
import pytest
from hypothesis import settings

from twoscale.plants import BuckParams, PmsmParams
from twoscale.sptheory import PartitionedLinearSystem

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# Filled by tests/test_acceptance.py, printed at the end of the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_system(rng, n_x, n_z, m, epsilon=1.0, fast_scale=10.0):
    """Random partitioned system with a comfortably invertible, stable A22."""
    a11 = rng.standard_normal((n_x, n_x))
    a12 = rng.standard_normal((n_x, n_z))
    a21 = rng.standard_normal((n_z, n_x))
    q, _ = np.linalg.qr(rng.standard_normal((n_z, n_z)))
    a22 = -fast_scale * (q @ np.diag(rng.uniform(1.0, 3.0, n_z)) @ q.T) + rng.standard_normal((n_z, n_z))
    b = rng.standard_normal((n_z, m))
    if m == n_z:
        b += 3.0 * np.eye(n_z)
    return PartitionedLinearSystem(a11, a12, a21, a22, b, epsilon)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def buck_ref():
    return BuckParams.reference_design()


@pytest.fixture
def pmsm_ref():
    return PmsmParams.reference_design()


GAIN_SETS = {
    "test-1": (0.94, 970.0, 2.0, 2000.0),
    "test-2": (0.7, 574.0, 3.0, 4500.0),
    "test-3": (0.45, 255.0, 10.0, 5e4),
}
