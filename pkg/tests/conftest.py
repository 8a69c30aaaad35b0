import sys

import numpy as np
import pytest

from predcode.model import PCNetwork


def scalar_chain(theta=1.0, var=1.0, prior_mean=0.0, prior_var=1.0, activation="identity") -> PCNetwork:
    """Two scalar layers: phi_0 <- theta * phi_1, prior N(prior_mean, prior_var)."""
    return PCNetwork(
        dims=(1, 1),
        weights=(np.array([[theta]]),),
        covs=(np.array([var]), np.array([prior_var])),
        prior_mean=np.array([prior_mean]),
        activation=activation,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
