"""Tests for the experiment pipelines."""

from pathlib import Path

import pytest

from dm_lab.config import ConfigError, ExperimentConfig, StoppingSpec
from dm_lab.experiments import EXPERIMENTS, build_setup, run, stopping_time
from dm_lab.reports import CsvReport, JsonReport
from doob_meyer import binary_tree, is_stopping_time, write_instance


def config(experiment, **overrides):
    values = {"experiment": experiment, "seed": 0, "depth": 3}
    values.update(overrides)
    return ExperimentConfig(**values)


class TestBuildSetup:
    """Tests for build_setup."""

    def test_ground_truth(self):
        """Test a ground-truth tree with one sign per master step."""
        setup = build_setup(config("decompose", predictable_level=2))

        assert setup.space.n_atoms == 8
        assert setup.truth.predictable_level == 2
        assert setup.S is setup.truth.S

    def test_squared_walk(self):
        """Test the walk tree without a generating pair."""
        setup = build_setup(config("ui", generator="squared_walk", depth=2))

        assert setup.space.n_atoms == 16
        assert setup.truth is None

    def test_random_space(self):
        """Test that the seed argument replaces the configured seed."""
        first = build_setup(config("decompose", generator="random"), seed=5)
        again = build_setup(config("decompose", generator="random", seed=5))

        assert first.seed == 5
        assert first.space.n_atoms == again.space.n_atoms

    def test_space_only_instance(self, tmp_path):
        """Test that pipelines needing a process reject a bare space."""
        path = write_instance(tmp_path / "coin.json", binary_tree(1))
        cfg = ExperimentConfig(experiment="ui", generator=None, instance=path)

        assert build_setup(cfg).S is None
        with pytest.raises(ConfigError, match="the instance has no process"):
            run(cfg)


class TestStoppingTime:
    """Tests for building stopping times from config entries."""

    def test_constant_on_process_grid(self):
        """Test a constant time expressed on the process grid."""
        setup = build_setup(config("convergence"))
        tau = stopping_time(setup, StoppingSpec(kind="constant", value="1/2^1"))

        assert tau.level == 3
        assert tau.ticks.tolist() == [4] * 8

    def test_hitting_time(self):
        """Test that a hitting time is a stopping time on the master grid."""
        setup = build_setup(config("convergence"))
        tau = stopping_time(setup, StoppingSpec(kind="hitting", value=0.0))

        assert is_stopping_time(setup.space, tau, 3)


class TestPipelines:
    """Tests for each named experiment."""

    def test_every_name_is_registered(self):
        """Test that the registry matches the experiment names."""
        assert sorted(EXPERIMENTS) == ["convergence", "decompose", "komlos", "ui", "validate"]

    def test_decompose(self):
        """Test one row per level with exact recovery."""
        result = run(config("decompose"))

        (report,) = result.reports
        assert isinstance(report, CsvReport)
        assert [row[1] for row in report.rows] == [1, 2, 3]
        assert result.failures == []
        assert result.summary["max_recovery_error"] <= 1e-10

    def test_ui(self):
        """Test the CSV rows and JSON summary."""
        result = run(config("ui", thresholds=(1.0, 2.0)))

        assert [type(r) for r in result.reports] == [CsvReport, JsonReport]
        assert len(result.reports[0].rows) == 6
        assert result.failures == []
        assert sorted(result.summary["envelope"]) == ["1", "2"]

    def test_komlos(self):
        """Test one record per level and bounds that hold."""
        result = run(config("komlos", predictable_level=3), max_workers=2)

        rows = result.reports[0].rows
        assert [row[:2] for row in rows] == [(1, 1), (2, 2), (3, 3)]
        assert result.failures == []
        assert result.reports[1].data["records"][0]["n"] == 1

    def test_convergence(self):
        """Test the summary of an instance predictable on D_1."""
        cfg = config(
            "convergence",
            depth=4,
            levels=(1, 2, 3),
            stopping_times=(StoppingSpec(kind="hitting", value=0.0),),
        )
        result = run(cfg)

        assert [r.name for r in result.reports] == [
            "convergence",
            "tau",
            "predictability",
            "convergence",
        ]
        assert result.failures == []
        assert result.summary["identity_residual"] <= 1e-12
        assert max(result.summary["sup_gaps"]) <= 1e-10

    def test_validate(self):
        """Test the instance summary."""
        result = run(config("validate", depth=2))

        assert result.summary["atoms"] == 4
        assert result.summary["blocks_at_1"] == 4
        assert result.summary["submartingale"] is True
        assert result.summary["mean_A1"] >= 0.0

    def test_missing_instance_file(self):
        """Test that a missing instance surfaces as FileNotFoundError."""
        cfg = ExperimentConfig(experiment="validate", generator=None, instance=Path("no.json"))
        with pytest.raises(FileNotFoundError):
            run(cfg)
