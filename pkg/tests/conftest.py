import math

import numpy as np
import pytest

from pksflow import grid

CRITICAL_MASS = 8.0 * math.pi


@pytest.fixture(scope="session")
def spec64():
    return grid.GridSpec(64, 20.0)


@pytest.fixture(scope="session")
def spec128():
    return grid.GridSpec(128, 40.0)


@pytest.fixture(scope="session")
def spec256():
    return grid.GridSpec(256, 40.0)


@pytest.fixture(scope="session")
def params_unit():
    return grid.SteadyStateParams(lam=1.0, mass=CRITICAL_MASS)


@pytest.fixture(scope="session")
def steady128(params_unit, spec128):
    return grid.steady_state(params_unit, (0.0, 0.0), spec128)


@pytest.fixture(scope="session")
def steady256(params_unit, spec256):
    return grid.steady_state(params_unit, (0.0, 0.0), spec256)


def gaussian_density(spec, mass, width, center=(0.0, 0.0), truncate=None):
    x, y = spec.meshgrid()
    r2 = (x - center[0]) ** 2 + (y - center[1]) ** 2
    v = np.exp(-r2 / (2.0 * width * width))
    if truncate is not None:
        v = v * np.maximum(1.0 - r2 / truncate**2, 0.0) ** 2
    v = v * (mass / (v.sum() * spec.cell_area))
    return grid.density_from_values(spec, v)
