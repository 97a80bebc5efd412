"""Tests for experiment configuration."""

from pathlib import Path

import pytest

from dm_lab.config import ConfigError, ExperimentConfig, StoppingSpec, threads_from_env


def generated(**overrides):
    values = {"experiment": "decompose", "seed": 0, "depth": 3}
    values.update(overrides)
    return ExperimentConfig(**values)


class TestExperimentConfig:
    """Tests for ExperimentConfig validation."""

    def test_defaults(self):
        """Test the defaults of a generated run."""
        config = generated()

        assert config.generator == "ground_truth"
        assert config.out == Path("reports")
        assert config.thresholds == (0.5, 1.0, 2.0, 4.0)
        assert config.level_list(3) == (1, 2, 3)

    def test_unknown_experiment(self):
        """Test that the experiment name is checked."""
        with pytest.raises(ConfigError, match="unknown experiment 'fit'"):
            generated(experiment="fit")

    def test_walk_depth_limit(self):
        """Test that the squared walk tree stays small."""
        with pytest.raises(ConfigError, match="depth 5 outside 1..4 for squared_walk"):
            generated(generator="squared_walk", depth=5)

    def test_tree_depth_limit(self):
        """Test the ground-truth tree depth cap."""
        generated(depth=16)
        with pytest.raises(ConfigError, match="outside 1..16"):
            generated(depth=17)

    def test_predictable_level(self):
        """Test that the predictable level lies on the master grid."""
        with pytest.raises(ConfigError, match="predictable_level 4 outside 1..3"):
            generated(predictable_level=4)

    def test_levels(self):
        """Test that levels are increasing and within the depth."""
        assert generated(levels=(1, 3)).level_list(3) == (1, 3)
        with pytest.raises(ConfigError, match="increasing"):
            generated(levels=(2, 2))
        with pytest.raises(ConfigError, match="outside 1..3"):
            generated(levels=(1, 4))

    def test_levels_past_instance_depth(self):
        """Test that levels are checked against a loaded instance."""
        config = ExperimentConfig(
            experiment="decompose", generator=None, instance=Path("x.json"), levels=(1, 2)
        )
        with pytest.raises(ConfigError, match="exceed the instance depth 1"):
            config.level_list(1)

    def test_thresholds(self):
        """Test that thresholds are positive."""
        with pytest.raises(ConfigError, match="thresholds must be positive"):
            generated(thresholds=(1.0, -1.0))


class TestFromFile:
    """Tests for reading config files."""

    def test_reads_file(self, write_json):
        """Test a complete config file."""
        path = write_json(
            "config.json",
            {
                "experiment": "convergence",
                "seed": 1,
                "depth": 4,
                "levels": [1, 2],
                "stopping_times": [{"hitting": 1}, {"constant": "3/2^2"}],
                "out": "runs/a",
            },
        )
        config = ExperimentConfig.from_file(path)

        assert config.levels == (1, 2)
        assert config.out == Path("runs/a")
        assert [spec.label for spec in config.stopping_times] == ["hit(1)", "const(3/2^2)"]

    def test_experiment_argument_wins(self, write_json):
        """Test that the positional experiment replaces the file's."""
        path = write_json("config.json", {"experiment": "ui", "seed": 0, "depth": 2})
        assert ExperimentConfig.from_file(path, experiment="komlos").experiment == "komlos"

    def test_instance_clears_generator(self, write_json):
        """Test that an instance path needs no seed or depth."""
        path = write_json("config.json", {"experiment": "validate", "instance": "i.json"})
        config = ExperimentConfig.from_file(path)

        assert config.generator is None
        assert config.instance == Path("i.json")

    def test_unknown_keys(self, write_json):
        """Test that misspelled keys are rejected."""
        path = write_json("config.json", {"experiment": "ui", "sede": 0})
        with pytest.raises(ConfigError, match="unknown config keys: sede"):
            ExperimentConfig.from_file(path)

    def test_non_integer_seed(self, write_json):
        """Test that seeds are integers."""
        path = write_json("config.json", {"experiment": "ui", "seed": 1.5, "depth": 2})
        with pytest.raises(ConfigError, match="seed must be an integer"):
            ExperimentConfig.from_file(path)

    def test_file_not_found(self, tmp_path):
        """Test error when the file doesn't exist."""
        with pytest.raises(FileNotFoundError, match="Config file not found"):
            ExperimentConfig.from_file(tmp_path / "nonexistent.json")

    def test_invalid_json(self, tmp_path):
        """Test error on a file that is not JSON."""
        path = tmp_path / "config.json"
        path.write_text("{", encoding="utf-8")
        with pytest.raises(ConfigError, match="Failed to read config"):
            ExperimentConfig.from_file(path)

    def test_overrides(self):
        """Test that flags replace file values and None leaves them."""
        config = generated().with_overrides(depth=5, seed=None, out=Path("x"))

        assert config.depth == 5
        assert config.seed == 0
        assert config.out == Path("x")
        assert generated().with_overrides() == generated()


class TestStoppingSpec:
    """Tests for StoppingSpec."""

    def test_bad_constant(self):
        """Test that constant times must be dyadic."""
        with pytest.raises(ConfigError, match=r"stopping_times\[0\]"):
            StoppingSpec.from_dict({"constant": "1/3"}, "stopping_times[0]")

    def test_unknown_kind(self):
        """Test that only constant and hitting times exist."""
        with pytest.raises(ConfigError, match="unknown stopping time kind 'exit'"):
            StoppingSpec.from_dict({"exit": 1}, "stopping_times[0]")

    def test_boolean_level(self):
        """Test that hitting levels are numbers."""
        with pytest.raises(ConfigError, match="must be a number"):
            StoppingSpec.from_dict({"hitting": True}, "stopping_times[0]")


class TestThreadsFromEnv:
    """Tests for threads_from_env."""

    def test_unset(self):
        """Test the single-thread default."""
        assert threads_from_env({}) == 1
        assert threads_from_env({"DM_LAB_THREADS": " "}) == 1

    def test_value(self):
        """Test a positive worker count."""
        assert threads_from_env({"DM_LAB_THREADS": "8"}) == 8

    @pytest.mark.parametrize("raw", ["0", "-2", "many"])
    def test_invalid(self, raw):
        """Test that non-positive or non-numeric values are rejected."""
        with pytest.raises(ConfigError, match="DM_LAB_THREADS must be a positive integer"):
            threads_from_env({"DM_LAB_THREADS": raw})
