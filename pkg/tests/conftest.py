"""Shared fixtures: small synthetic scenarios reused across the suite."""

import pytest

from gridledger.scenario import generate_synthetic


@pytest.fixture(scope="session")
def scen_2x4():
    return generate_synthetic(seed=1, n_users=2, horizon=4)


@pytest.fixture(scope="session")
def scen_3x8():
    return generate_synthetic(seed=2, n_users=3, horizon=8)
