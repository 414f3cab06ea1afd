import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_in_ball(rng, count, n, radius):
    """Uniform samples in the ball of the given radius."""
    x = rng.normal(size=(count, n))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x * radius * rng.random((count, 1)) ** (1.0 / n)


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance verdicts collected by test_acceptance, one line per criterion."""
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])
