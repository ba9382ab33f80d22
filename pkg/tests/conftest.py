import numpy as np
import pytest

from softarm.datagen import DataGenConfig, compute_norm_stats, generate_dataset
from softarm.models import TrainConfig, train_forward, train_inverse
from softarm.plant import PlantParams


@pytest.fixture(scope="session")
def small_ds():
    return generate_dataset(PlantParams(), DataGenConfig(total_frames=400, seed=3))


@pytest.fixture(scope="session")
def small_stats(small_ds):
    return compute_norm_stats(small_ds)


@pytest.fixture(scope="session")
def default_ds():
    return generate_dataset()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def smoke_fwd(small_ds):
    return train_forward(small_ds, TrainConfig(seed=2), epochs=3)


@pytest.fixture(scope="session")
def smoke_inv(small_ds, smoke_fwd):
    return train_inverse(small_ds, smoke_fwd, TrainConfig(variant="c", seed=2), epochs=2)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
