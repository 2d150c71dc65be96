import numpy as np
import pytest

from gridstate.assessment import GridModel
from gridstate.grid import build_ordering
from gridstate.loadflow import LoadScenario, empirical_theta_sigma, solve_loadflow
from gridstate.metering import NoiseSpec
from gridstate.synthetic import daily_scenarios, example_grid, reference_scenario


@pytest.fixture(scope="session")
def grid():
    return example_grid()


@pytest.fixture(scope="session")
def ordering(grid):
    return build_ordering(grid)


@pytest.fixture(scope="session")
def daily_states(grid, ordering):
    return [solve_loadflow(grid, ordering, s).state for s in daily_scenarios(grid)]


@pytest.fixture(scope="session")
def sigma_theta(daily_states):
    return empirical_theta_sigma(daily_states)


@pytest.fixture(scope="session")
def true_state(grid, ordering):
    return solve_loadflow(grid, ordering, reference_scenario(grid)).state


@pytest.fixture(scope="session")
def model(grid):
    return GridModel.build(grid)


@pytest.fixture(scope="session")
def base_noise(sigma_theta):
    """Base case: sigma_u^2 = 2.41 V^2, sigma_i^2 = 2.1e-3 A^2, sigma_phi = 0.01 rad."""
    return NoiseSpec(sigma_theta=sigma_theta, sigma_u=np.sqrt(2.41), sigma_i=np.sqrt(2.1e-3), sigma_phi=0.01)


def small_path_state(impedances, loads, slack=400.0):
    from gridstate.grid import path_grid

    topo = path_grid(impedances)
    o = build_ordering(topo)
    sc = LoadScenario(slack, loads)
    return topo, o, solve_loadflow(topo, o, sc).state


ACCEPTANCE_LINES = []


@pytest.fixture()
def acceptance():
    """Record one summary line per acceptance criterion and assert it."""

    def report(label, ok, detail):
        ACCEPTANCE_LINES.append(f"criterion {label}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, detail

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
