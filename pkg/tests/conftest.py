"""
Shared pytest fixtures for the reinitialization tests.
"""
import os
import sys

import dotenv
import numpy as np
import pytest

# Add parent directory to Python path so we can import the package
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from python_afmm.models import GridSpec
from python_afmm.shapes import Plane

# Load environment variables from parent directory
env_path = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), ".env")
dotenv.load_dotenv(env_path)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def grid2d() -> GridSpec:
    """[-2, 2]^2 with h = 0.1."""
    return GridSpec.cube(2, 41)


@pytest.fixture
def small_grid2d() -> GridSpec:
    """[-2, 2]^2 with h = 0.4."""
    return GridSpec.cube(2, 11)


@pytest.fixture
def small_grid3d() -> GridSpec:
    """[-2, 2]^3 with h = 0.5."""
    return GridSpec.cube(3, 9)


@pytest.fixture(autouse=True)
def clean_afmm_env(monkeypatch):
    """Keep AFMM_* variables from the developer's shell out of the tests."""
    for name in list(os.environ):
        if name.startswith("AFMM_"):
            monkeypatch.delenv(name)


def random_plane(rng: np.random.Generator, dim: int) -> Plane:
    """A plane with a random unit normal crossing the middle of the domain."""
    normal = rng.normal(size=dim)
    return Plane(normal / np.linalg.norm(normal), offset=rng.uniform(-0.5, 0.5), scale=rng.uniform(0.5, 3.0))
