import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bnflow.data_model import DataDistribution, generate_gaussian

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def square_data():
    """Four corners of the square: Sigma = I exactly, mean zero."""
    x = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    return DataDistribution(samples=x, targets=np.array([0.5, -0.2, 0.1, 0.3]))


@pytest.fixture
def aniso_data():
    dist = generate_gaussian(2, 300, np.diag([5.0, 1.0]), seed=11)
    rng = np.random.default_rng(5)
    return dist.with_targets(rng.standard_normal(dist.n))


@pytest.fixture
def data3():
    sigma = np.array([[4.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 0.5]])
    dist = generate_gaussian(3, 200, sigma, seed=3)
    rng = np.random.default_rng(8)
    return dist.with_targets(np.tanh(dist.samples @ rng.standard_normal(3)))


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Collects one summary line per acceptance criterion."""
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
