import numpy as np
import pytest

from ctxadapt.msg_utils import set_verbosity


@pytest.fixture(autouse=True)
def quiet():
    set_verbosity(False)
    yield
    set_verbosity(True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
