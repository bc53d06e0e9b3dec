"""Shared fixtures: every test runs in 64-bit precision."""

import os
from pathlib import Path

import numpy as np
import pytest

from uhn import tensorcore as tc
from uhn.config import MNIST_DIR_ENV, PRECISION_VERIFY


@pytest.fixture(autouse=True)
def float64():
    tc.set_precision(PRECISION_VERIFY)
    yield
    tc.set_precision(PRECISION_VERIFY)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def mnist_dir():
    """Directory with the four MNIST IDX files; skips when not configured."""
    value = os.environ.get(MNIST_DIR_ENV)
    if not value:
        pytest.skip(f"${MNIST_DIR_ENV} not set")
    return Path(value)
