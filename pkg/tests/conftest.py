import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pairview.sensorium import gen_world, sample_objects, score_table_from_world
from pairview.viewsphere import GridSpec

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def grid():
    return GridSpec()


@pytest.fixture(scope="session")
def world(grid):
    return gen_world(3, 4, grid, feature_dim=4, noise_sigma=0.8, ambiguity=0.3)


@pytest.fixture(scope="session")
def train_table(world):
    rng = np.random.default_rng(11)
    cls = np.repeat(np.arange(world.num_classes), 5)
    return score_table_from_world(world, cls, sample_objects(world, cls, rng), "train")
