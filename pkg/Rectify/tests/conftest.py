import copy
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from config.settings import SETTINGS  # noqa: E402
from src.model import Activation, NoiseModel, generate_instance, generate_weights  # noqa: E402
from src.utils import SeedStream  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size acceptance runs")


@pytest.fixture
def settings():
    return copy.deepcopy(SETTINGS)


@pytest.fixture
def stream():
    return SeedStream(1234)


@pytest.fixture
def relu():
    return Activation.relu()


@pytest.fixture
def small_instance(stream, relu):
    """m=3, k=2, d=4 noiseless instance with enough columns for the exact pipelines"""
    w = generate_weights(3, 2, 4, 1.0, stream.child('weights'))
    return generate_instance(w, relu, 3000, NoiseModel(), stream.child('instance'))


@pytest.fixture
def rng():
    return np.random.default_rng(7)
