"""Session fixtures: benchmark problem handles and reusable ensembles."""

import pytest

import picontrol.bench_gbm as bg
from picontrol.cost import path_costs, weights
from picontrol.sde import ZeroPolicy, simulate

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def gbm_spec():
    return bg.GBMSpec()


@pytest.fixture(scope="session")
def log_twin(gbm_spec):
    return bg.make_log_problem(gbm_spec)


@pytest.fixture(scope="session")
def twin_zero_run(log_twin):
    """10^4 log-twin paths under the zero policy, with costs and weights."""
    ens = simulate(log_twin, ZeroPolicy(1), 10_000, seed=3)
    costs = path_costs(ens, log_twin)
    return ens, costs, weights(costs)


@pytest.fixture(scope="session")
def twin_star_run(gbm_spec, log_twin):
    """10^4 log-twin paths under the closed-form optimal policy."""
    ens = simulate(log_twin, bg.log_optimal_policy(gbm_spec), 10_000, seed=4)
    costs = path_costs(ens, log_twin)
    return ens, costs, weights(costs)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance summary")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
