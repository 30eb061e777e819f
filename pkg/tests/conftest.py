import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: desk-scale training and end-to-end runs')
    config.addinivalue_line('markers', 'acceptance: full train-and-detect runs on held-out scenes')


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
