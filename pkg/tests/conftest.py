import numpy as np
import pytest
from hypothesis import settings

from insertbench.collector import CollectConfig, collect_backward
from insertbench.geometry import MM, standard_tasks
from insertbench.sim import SimConfig

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(scope="session")
def suite():
    return standard_tasks()


@pytest.fixture(scope="session")
def square(suite):
    return suite["square_1mm"]


@pytest.fixture(scope="session")
def small_dataset(square):
    """Twelve backward-collected samples on the square task."""
    return collect_backward(square, None, CollectConfig(n_p=12, rng_seed=7), SimConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, shape=(64, 64, 3)):
    return rng.random(shape).astype(np.float32)


def mm(*v):
    return np.array(v, float) * MM


# one line per acceptance criterion, printed after the run
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
