import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tvreg.locfit import RegressionData
from tvreg.rng import make_rng

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


def affine_data(n=200, p=2, seed=0, noise=0.0):
    """y_i = x_i'(c0 + c1 i/n) (+ noise) with a well-conditioned random design."""
    rng = make_rng(seed, "affine")
    X = rng.standard_normal((n, p))
    X[:, 0] = 1.0 + 0.5 * X[:, 0]
    c0 = np.linspace(1.0, -1.0, p)
    c1 = np.linspace(0.5, 2.0, p)
    t = np.arange(1, n + 1) / n
    beta = c0[None, :] + c1[None, :] * t[:, None]
    y = np.einsum("ij,ij->i", X, beta) + noise * rng.standard_normal(n)
    return RegressionData(y, X), c0, c1


@pytest.fixture
def noisy_sample():
    data, _, _ = affine_data(n=300, p=2, seed=11, noise=0.5)
    return data
