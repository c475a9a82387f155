import numpy as np
import pytest

from harmonic_cwy.initial_data import HarmonicAsymptotics, complete_expansion
from harmonic_cwy.sphere import SphereGrid

RADII = np.array([50.0, 100.0, 200.0, 400.0, 800.0])


@pytest.fixture(scope="session")
def grid12():
    return SphereGrid(12)


@pytest.fixture(scope="session")
def grid16():
    return SphereGrid(16)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def radii():
    return RADII


@pytest.fixture(scope="session")
def generic_data():
    return HarmonicAsymptotics(
        0.6,
        np.array([0.3, -0.2, 0.5]),
        np.array([0.1, 0.2, 0.3]),
        np.array([[0.1, 0.3, -0.2], [0.0, 0.2, 0.4], [0.5, -0.1, 0.3]]),
    )


@pytest.fixture(scope="session")
def generic_case(generic_data, grid16):
    return generic_data, complete_expansion(generic_data, grid16), grid16
