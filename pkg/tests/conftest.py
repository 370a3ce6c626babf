import numpy as np
import pytest

from synthlogs.logcentric import TWO_PI


def cylinder_points(radius=100.0, x_min=0.0, x_max=1000.0, n_theta=180, n_x=200, y0=0.0, z0=0.0, bend=None):
    """Grid of points on a (possibly bent) cylinder along x.

    ``bend`` is an optional callable giving the y offset of the axis at x.
    The frame convention is theta measured from +z towards +y.
    """
    th = np.arange(n_theta) * TWO_PI / n_theta
    x = np.linspace(x_min, x_max, n_x)
    X, T = np.meshgrid(x, th, indexing="ij")
    y = radius * np.sin(T) + y0
    z = radius * np.cos(T) + z0
    if bend is not None:
        y = y + bend(X)
    return np.stack([X.ravel(), y.ravel(), z.ravel()], axis=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance results, filled in by tests/test_acceptance.py and echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
