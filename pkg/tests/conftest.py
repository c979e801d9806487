import numpy as np
import pytest

from spectra_gauntlet.field import make_grid
from spectra_gauntlet.ks import KsConfig, generate_dataset
from spectra_gauntlet.surrogate import SpectralOperatorConfig, train_operator

# Lines recorded by the acceptance suite, echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ks_grid():
    return make_grid(256, 64.0)


@pytest.fixture(scope="session")
def small_dataset():
    """Two short training trajectories and one test trajectory."""
    config = KsConfig(burn_in_time=20.0, seed=3)
    return generate_dataset(config, n_train=2, n_test=1, horizon=10.0)


@pytest.fixture(scope="session")
def small_operator(small_dataset):
    config = SpectralOperatorConfig(k_max=16, width=8, n_layers=2, steps=60, batch_size=16, seed=0)
    params, history = train_operator(config, small_dataset)
    return params, history
