import sys

import numpy as np
import pytest

from lorenz_cusp.cuspmap import build_analytic
from lorenz_cusp.flow import FlowParams, PerturbationSpec, initial_condition
from lorenz_cusp.section import collect_maxima


@pytest.fixture(scope="session")
def classical():
    return FlowParams.classical()


@pytest.fixture(scope="session")
def analytic_map():
    return build_analytic()


@pytest.fixture(scope="session")
def lorenz_series(classical):
    """About 3e4 Casimir maxima on the classical attractor."""
    return collect_maxima(classical, PerturbationSpec.none(), initial_condition(0), 30_000).series


@pytest.fixture(scope="session")
def reproduction():
    from lorenz_cusp.reproduce import reproduce
    return reproduce(seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in list(sys.modules.items())
                if name.endswith("test_acceptance") and hasattr(m, "RESULTS")), None)
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
