import numpy as np
import pytest

from neuropdmp import ModelParams, SimConfig, linear_rate, simulate


@pytest.fixture(scope="session")
def params5():
    return ModelParams(n_neurons=5, lam=1.0, m=1.0, k_max=2.0)


@pytest.fixture(scope="session")
def params10():
    return ModelParams(n_neurons=10, lam=1.0, m=1.0, k_max=2.0)


@pytest.fixture(scope="session")
def rate_id():
    return linear_rate(2.0)


@pytest.fixture(scope="session")
def log5(params5, rate_id):
    """Medium trajectory shared by read-only tests."""
    return simulate(params5, rate_id, SimConfig(horizon=50.0, seed=7))


@pytest.fixture(scope="session")
def log10(params10, rate_id):
    return simulate(params10, rate_id, SimConfig(horizon=50.0, seed=11))
