"""Shared spaces and processes for the doob_meyer tests."""

from pathlib import Path

import pytest

from doob_meyer import binary_tree, gen_squared_walk

FIXTURES_DIR = Path(__file__).parent / "fixtures"


@pytest.fixture
def coin_space():
    """Two fair signs, one revealed at t=1/2 and one at t=1; atoms "--", "-+", "+-", "++"."""
    return binary_tree(1)


@pytest.fixture
def walk_space():
    """Fair one-sign-per-step tree on D_2 (16 atoms)."""
    return binary_tree(2)


@pytest.fixture
def walk(walk_space):
    """Squared random walk on D_2, whose compensator is A_t = t."""
    return gen_squared_walk(walk_space)


@pytest.fixture
def fixtures_dir():
    return FIXTURES_DIR
