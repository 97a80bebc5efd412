"""Tests for filtered spaces, dyadic times and stopping times."""

from fractions import Fraction

import numpy as np
import pytest

from doob_meyer import (
    AdaptedProcess,
    DyadicGrid,
    FiniteFilteredSpace,
    NotStoppingTimeError,
    SpaceError,
    StoppingTime,
    binary_tree,
    conditional_expectation,
    evaluate_at_stopping_time,
    format_time,
    is_stopping_time,
    lp_norm,
)
from doob_meyer.filtered_space import as_time, time_level
from doob_meyer.processes import random_space


def two_atom_partitions():
    return {"0": [[0, 1]], "1/2^1": [[0], [1]], "1": [[0], [1]]}


class TestDyadicTimes:
    """Tests for parsing and formatting dyadic times."""

    def test_as_time_parses_grid_notation(self):
        """Test that "j/2^n" strings become exact fractions."""
        assert as_time("3/2^3") == Fraction(3, 8)
        assert as_time("0/2^0") == 0
        assert as_time("0.5") == Fraction(1, 2)

    def test_as_time_rejects_garbage(self):
        """Test that unparseable strings raise SpaceError."""
        with pytest.raises(SpaceError, match="not a time"):
            as_time("half")

    def test_format_time_uses_lowest_terms(self):
        """Test that times are printed on their own coarsest grid."""
        assert format_time(Fraction(6, 16)) == "3/2^3"
        assert format_time(Fraction(1, 2)) == "1/2^1"
        assert format_time(1) == "1/2^0"

    def test_time_level_rejects_non_dyadic(self):
        """Test that 1/3 lies on no dyadic grid."""
        with pytest.raises(SpaceError, match="not a dyadic time"):
            time_level(Fraction(1, 3))

    def test_time_level_rejects_outside_horizon(self):
        """Test that times past 1 are rejected."""
        with pytest.raises(SpaceError, match="outside"):
            time_level(Fraction(5, 4))


class TestDyadicGrid:
    """Tests for DyadicGrid."""

    def test_times_and_length(self):
        """Test that D_2 has the five times 0, 1/4, ..., 1."""
        grid = DyadicGrid(2)
        assert len(grid) == 5
        assert grid.times == tuple(Fraction(j, 4) for j in range(5))
        assert grid.step == Fraction(1, 4)

    def test_index_and_membership(self):
        """Test that grid positions are found for times on the grid only."""
        grid = DyadicGrid(3)
        assert grid.index("3/2^2") == 6
        assert Fraction(1, 4) in grid
        assert Fraction(1, 16) not in grid
        with pytest.raises(SpaceError, match="not on D_3"):
            grid.index(Fraction(1, 16))

    def test_round_up(self):
        """Test rounding up to the next grid time."""
        grid = DyadicGrid(2)
        assert grid.round_up(Fraction(1, 3)) == Fraction(1, 2)
        assert grid.round_up(Fraction(1, 2)) == Fraction(1, 2)
        assert grid.round_up(0) == 0


class TestFromPartitions:
    """Tests for FiniteFilteredSpace.from_partitions."""

    def test_builds_space(self):
        """Test that explicit partitions produce the expected blocks."""
        space = FiniteFilteredSpace.from_partitions(
            ["a", "b"], [0.25, 0.75], 1, two_atom_partitions()
        )

        assert space.n_atoms == 2
        assert space.blocks(0) == ((0, 1),)
        assert space.blocks("1/2^1") == ((0,), (1,))
        assert space.block_probs(0) == pytest.approx([1.0])

    def test_rejects_non_refining_partitions(self):
        """Test that a partition coarser than its predecessor is named."""
        partitions = {"0": [[0, 1]], "1/2^1": [[0], [1]], "1": [[0, 1]]}

        with pytest.raises(SpaceError, match="does not refine") as excinfo:
            FiniteFilteredSpace.from_partitions(["a", "b"], [0.5, 0.5], 1, partitions)
        assert excinfo.value.location == 'partitions["1/2^0"]'

    def test_rejects_missing_time(self):
        """Test that every master time needs a partition."""
        partitions = {"0": [[0, 1]], "1": [[0], [1]]}

        with pytest.raises(SpaceError, match="no partition at t=1/2\\^1"):
            FiniteFilteredSpace.from_partitions(["a", "b"], [0.5, 0.5], 1, partitions)

    def test_rejects_zero_probability(self):
        """Test that atoms need positive mass."""
        with pytest.raises(SpaceError, match="positive mass") as excinfo:
            FiniteFilteredSpace.from_partitions(["a", "b"], [1.0, 0.0], 1, two_atom_partitions())
        assert excinfo.value.location == "probs[1]"

    def test_rejects_probabilities_not_summing_to_one(self):
        """Test that probabilities must sum to 1."""
        with pytest.raises(SpaceError, match="not 1"):
            FiniteFilteredSpace.from_partitions(["a", "b"], [0.5, 0.6], 1, two_atom_partitions())

    def test_rejects_atom_in_two_blocks(self):
        """Test that blocks must be disjoint."""
        partitions = {"0": [[0, 1]], "1/2^1": [[0, 1], [1]], "1": [[0], [1]]}

        with pytest.raises(SpaceError, match="more than one block") as excinfo:
            FiniteFilteredSpace.from_partitions(["a", "b"], [0.5, 0.5], 1, partitions)
        assert excinfo.value.location == 'partitions["1/2^1"][1]'

    def test_rejects_unknown_time(self):
        """Test that a key off the master grid is named."""
        partitions = {**two_atom_partitions(), "1/2^2": [[0], [1]]}

        with pytest.raises(SpaceError, match="not on D_1") as excinfo:
            FiniteFilteredSpace.from_partitions(["a", "b"], [0.5, 0.5], 1, partitions)
        assert excinfo.value.location == 'partitions["1/2^2"]'


class TestConditionalExpectation:
    """Tests for conditional expectations as block averages."""

    def test_block_averages(self, coin_space):
        """Test E[f | F_t] at the three times of the coin space."""
        f = [1.0, 2.0, 3.0, 4.0]

        assert conditional_expectation(coin_space, f, 0) == pytest.approx([2.5] * 4)
        assert conditional_expectation(coin_space, f, "1/2^1") == pytest.approx(
            [1.5, 1.5, 3.5, 3.5]
        )
        assert conditional_expectation(coin_space, f, 1) == pytest.approx(f)

    def test_tower_property(self):
        """Test E[E[f | F_t] | F_s] = E[f | F_s] for s <= t on random spaces."""
        for seed in range(100):
            space = random_space(seed, 1 + seed % 4)
            f = np.random.default_rng(seed).standard_normal(space.n_atoms)
            times = space.grid().times
            for i, t in enumerate(times):
                inner = conditional_expectation(space, f, t)
                for s in times[: i + 1]:
                    assert np.allclose(
                        conditional_expectation(space, inner, s),
                        conditional_expectation(space, f, s),
                        atol=1e-12,
                    )

    def test_preserves_expectation(self):
        """Test E[E[f | F_t]] = E[f] at every master time."""
        for seed in range(100):
            space = random_space(seed, 3)
            f = np.random.default_rng(seed).standard_normal(space.n_atoms)
            for t in space.grid().times:
                assert space.expectation(conditional_expectation(space, f, t)) == pytest.approx(
                    space.expectation(f), abs=1e-12
                )

    def test_contraction(self):
        """Test |E[f | F_t]|_p <= |f|_p for p = 1 and p = 2."""
        for seed in range(100):
            space = random_space(seed, 3)
            f = 3.0 * np.random.default_rng(seed).standard_normal(space.n_atoms)
            for t in space.grid().times:
                projected = conditional_expectation(space, f, t)
                for p in (1, 2):
                    assert lp_norm(space, projected, p) <= lp_norm(space, f, p) * (1 + 1e-12)

    def test_random_trees_refine(self):
        """Test that every block at t lies inside one block at the previous time."""
        for seed in range(50):
            space = random_space(seed, 1 + seed % 8)
            times = space.grid().times
            for s, t in zip(times, times[1:]):
                coarse = space.labels_at(s)
                for block in space.blocks(t):
                    assert len({int(coarse[w]) for w in block}) == 1
            assert space.block_count(0) <= space.block_count(1) <= space.n_atoms

    def test_unknown_time(self, coin_space):
        """Test that a time off the master grid is rejected."""
        with pytest.raises(SpaceError, match="no partition"):
            conditional_expectation(coin_space, [0.0] * 4, Fraction(1, 4))

    def test_wrong_length(self, coin_space):
        """Test that one value per atom is required."""
        with pytest.raises(ValueError, match="expected 4 values"):
            conditional_expectation(coin_space, [0.0] * 3, 0)

    def test_project_and_reindex(self, coin_space):
        """Test that project averages backwards and reindex copies forwards."""
        at_one = np.array([1.0, 2.0, 3.0, 4.0])

        half = coin_space.project(at_one, 1, "1/2^1")
        assert half == pytest.approx([1.5, 3.5])
        assert coin_space.reindex(half, "1/2^1", 1) == pytest.approx([1.5, 1.5, 3.5, 3.5])


class TestLpNorm:
    """Tests for weighted L^p norms."""

    def test_l1_and_l2(self, coin_space):
        """Test the two supported norms on uniform weights."""
        f = [1.0, -1.0, 2.0, 0.0]

        assert lp_norm(coin_space, f, 1) == pytest.approx(1.0)
        assert lp_norm(coin_space, f, 2) == pytest.approx(np.sqrt(1.5))

    def test_other_p(self, coin_space):
        """Test that only p = 1 and p = 2 are supported."""
        with pytest.raises(ValueError, match="p must be 1 or 2"):
            lp_norm(coin_space, [0.0] * 4, 3)


class TestStoppingTimes:
    """Tests for stopping-time checks and stopped values."""

    def test_stop_on_first_sign(self, coin_space):
        """Test that stopping at 1/2 after a down move is a stopping time."""
        tau = StoppingTime(level=1, ticks=[1, 1, 2, 2])
        assert is_stopping_time(coin_space, tau, 1)

    def test_peeking_is_not_a_stopping_time(self, coin_space):
        """Test that deciding at 1/2 with the second sign fails."""
        tau = StoppingTime(level=1, ticks=[1, 2, 1, 2])
        assert not is_stopping_time(coin_space, tau, 1)

    def test_times_off_the_grid(self, coin_space):
        """Test that a random time off D_level is no stopping time on D_level."""
        assert not is_stopping_time(coin_space, ["1/2^2", 0, 0, 0], 1)

    def test_constant_time(self, coin_space):
        """Test that a constant time is a stopping time."""
        tau = StoppingTime.constant(coin_space, "1/2^1")
        assert tau.times == (Fraction(1, 2),) * 4
        assert is_stopping_time(coin_space, tau, 1)

    def test_at_level(self):
        """Test moving a stopping time between grids."""
        tau = StoppingTime(level=1, ticks=[1, 2])
        assert list(tau.at_level(2).ticks) == [2, 4]
        with pytest.raises(ValueError, match="does not take values on D_0"):
            tau.at_level(0)

    def test_evaluate_deterministic_process(self, coin_space):
        """Test that X_tau of X_t = t equals tau."""
        X = AdaptedProcess.deterministic(coin_space, 1, float)
        tau = StoppingTime(level=1, ticks=[0, 0, 0, 0])
        later = StoppingTime(level=1, ticks=[1, 1, 2, 2])

        assert evaluate_at_stopping_time(coin_space, X, tau) == pytest.approx([0.0] * 4)
        assert evaluate_at_stopping_time(coin_space, X, later) == pytest.approx(
            [0.5, 0.5, 1.0, 1.0]
        )

    def test_evaluate_rejects_non_stopping_time(self, coin_space):
        """Test that stopped values need a stopping time."""
        X = AdaptedProcess.deterministic(coin_space, 1, float)
        with pytest.raises(NotStoppingTimeError):
            evaluate_at_stopping_time(coin_space, X, StoppingTime(level=1, ticks=[1, 2, 1, 2]))

    def test_evaluate_rejects_finer_time(self):
        """Test that a stopping time finer than the process grid is rejected."""
        space = binary_tree(2, signs=2)
        X = AdaptedProcess.deterministic(space, 1, float)
        tau = StoppingTime.constant(space, "1/2^2", level=2)
        with pytest.raises(ValueError, match="not on the process grid"):
            evaluate_at_stopping_time(space, X, tau)

    def test_level_finer_than_master(self, coin_space):
        """Test that no random time is a stopping time on a grid without partitions."""
        tau = StoppingTime(level=2, ticks=[0, 0, 0, 0])

        assert not is_stopping_time(coin_space, tau, 2)
        assert not is_stopping_time(coin_space, [0, 0, 0, 0], 5)
        X = AdaptedProcess.deterministic(coin_space, 1, float)
        with pytest.raises(NotStoppingTimeError):
            evaluate_at_stopping_time(coin_space, X, tau)
