import numpy as np
import pytest

from benard_mix.grid import Grid, ModeSpace
from benard_mix.noise import NoiseConfig, build_basis
from benard_mix.thermal import StepperConfig, ThermalStepper


@pytest.fixture(scope="session")
def small_grid():
    return Grid(16, 16, 16)


@pytest.fixture(scope="session")
def small_space(small_grid):
    return ModeSpace(small_grid)


@pytest.fixture(scope="session")
def small_noise(small_grid):
    config = NoiseConfig(a=10.0, m=16, seed=1, n_substeps=64)
    return config, build_basis(config, small_grid)


@pytest.fixture
def small_stepper(small_grid):
    return ThermalStepper(small_grid, StepperConfig(dt=1.0 / 64))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(number, name, passed, detail)``."""

    def record(number, name, passed, detail=""):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
        request.config.stash[_ACCEPTANCE].append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
