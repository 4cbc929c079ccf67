import numpy as np
import pytest

from shapekit import build_decomposition, make_toy_model

TOY_PARTS = 12
TOY_VERTS_PER_PART = 48
TOY_SEED = 0


@pytest.fixture(scope="session")
def toy_model():
    """The acceptance-scale fixture: 12 parts x 48 vertices, seed 0."""
    return make_toy_model(TOY_PARTS, TOY_VERTS_PER_PART, TOY_SEED)


@pytest.fixture(scope="session")
def small_model():
    """A lighter fixture for loops that rebuild state many times."""
    return make_toy_model(5, 16, 1)


@pytest.fixture(scope="session")
def toy_decomp(toy_model):
    return build_decomposition(toy_model, 3)


@pytest.fixture(scope="session")
def toy_decomp_n1(toy_model):
    return build_decomposition(toy_model, 1)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
