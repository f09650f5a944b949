import os
import sys

import numpy as np
import pytest

# Add the repository root to the path so ``src.srblab`` imports resolve
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from src.srblab.space import NormedSpace  # noqa: E402


@pytest.fixture
def temp_dir(tmp_path):
    """Create a temporary directory for tests."""
    return tmp_path


@pytest.fixture
def rng():
    """A seeded generator so sampled test inputs are fixed."""
    return np.random.default_rng(12345)


@pytest.fixture
def sup2():
    """R^2 with the sup norm."""
    return NormedSpace.lp(2, np.inf)


@pytest.fixture
def euclid3():
    return NormedSpace.lp(3, 2.0)


@pytest.fixture(params=["lp:1:3", "lp:2:3", "lp:inf:3", "weighted_sup:1,2,0.5"])
def space3(request):
    """Every built-in norm family on R^3."""
    from src.srblab.config import parse_space_spec

    return NormedSpace.from_config(parse_space_spec(request.param))
