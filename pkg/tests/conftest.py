"""Shared fixtures: catalog systems and quiet logging."""

import pytest
from loguru import logger

from stochgrad_lab.vectorfield import catalog_system


@pytest.fixture(autouse=True)
def quiet_logs():
    """Silence loguru output during tests."""
    logger.disable("stochgrad_lab")
    yield
    logger.enable("stochgrad_lab")


@pytest.fixture
def quadratic():
    return catalog_system("quadratic", [1.0])


@pytest.fixture
def quadratic_2d():
    return catalog_system("quadratic", [1.0], dim=2)


@pytest.fixture
def quartic():
    return catalog_system("quartic")


@pytest.fixture
def circle():
    return catalog_system("circle")


@pytest.fixture
def double_well():
    return catalog_system("double_well")


@pytest.fixture
def ridge():
    return catalog_system("ridge")
