"""
Shared fixtures for the variable selection test suite.
"""

import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(ROOT, 'src'))
sys.path.insert(0, ROOT)

from logger import PipelineLogger  # noqa: E402
from data_loader import DatasetLoader  # noqa: E402


@pytest.fixture
def pipeline_logger(tmp_path):
    return PipelineLogger("test", log_directory=str(tmp_path / "logs"), console_level="WARNING")


@pytest.fixture
def loader(pipeline_logger):
    return DatasetLoader(pipeline_logger)


@pytest.fixture
def hald(loader):
    return loader.builtin("hald")


@pytest.fixture
def uscrime(loader):
    return loader.builtin("uscrime")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def regression_data(rng):
    """n=40, d=5 design with signal on covariates 0 and 2."""
    X = rng.standard_normal((40, 5))
    y = 1.0 + 2.0 * X[:, 0] - 1.5 * X[:, 2] + rng.standard_normal(40)
    return X, y
