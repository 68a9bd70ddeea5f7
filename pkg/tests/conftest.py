import numpy as np
import pytest
from hypothesis import settings

from homsfem.coefficients import product_composite, sum_composite
from homsfem.mesh import Circle, build_unit_cell_mesh

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")

INC = Circle((0.5, 0.5), 0.25)


@pytest.fixture(scope="session")
def inclusion():
    return INC


@pytest.fixture(scope="session")
def cell_mesh():
    return build_unit_cell_mesh(10, INC)


@pytest.fixture(scope="session")
def product_model():
    return product_composite(geometry=INC)


@pytest.fixture(scope="session")
def sum_model():
    return sum_composite(geometry=INC)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
