import numpy as np
import pytest

from ovmask import autodiff


@pytest.fixture(autouse=True)
def fresh_graph():
    autodiff.reset_graph()
    yield
    autodiff.reset_graph()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
