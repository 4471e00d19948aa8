"""
shared pytest setup: put the flat modules on the import path and provide
seeded random generators
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_dataset(rng):
    from core import Dataset
    return Dataset(rng.standard_normal((8, 4)), rng.standard_normal(8))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long monte carlo or training runs")
