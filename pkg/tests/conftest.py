"""Shared fixtures for the formationbench suite.

Expensive objects (reference curves, the default alignment, one synthetic
fleet) are built once per session; everything downstream treats them as
read-only.
"""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from formationbench.ocv import reference_curves
from formationbench.stoichsim import default_alignment, default_resistance_model
from formationbench.synthcell import generate_fleet

settings.register_profile(
    "suite",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def curves():
    return reference_curves()


@pytest.fixture(scope="session")
def alignment(curves):
    return default_alignment(curves)


@pytest.fixture(scope="session")
def rmodel():
    return default_resistance_model()


@pytest.fixture(scope="session")
def fleet():
    """Default 39-cell synthetic fleet, generated once."""
    return generate_fleet()


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
