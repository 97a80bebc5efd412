"""Experiment configuration: one JSON file, flag overrides and the thread cap."""

import json
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

from doob_meyer.filtered_space import SpaceError, as_time, time_level
from doob_meyer.limit import RECOVERY_TOL

EXPERIMENT_NAMES = ("decompose", "ui", "komlos", "convergence", "validate")
GENERATORS = ("ground_truth", "squared_walk", "random")
MAX_WALK_DEPTH = 4
MAX_TREE_DEPTH = 16
THREADS_VARIABLE = "DM_LAB_THREADS"


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class StoppingSpec:
    """A constant time ``"j/2^n"`` or the first time S exceeds a level."""

    kind: str
    value: str | float

    @property
    def label(self) -> str:
        if self.kind == "constant":
            return f"const({self.value})"
        return f"hit({self.value:g})"

    @classmethod
    def from_dict(cls, data: Any, location: str) -> "StoppingSpec":
        if not isinstance(data, dict) or len(data) != 1:
            raise ConfigError(f"{location}: expected {{\"constant\": t}} or {{\"hitting\": c}}")
        ((kind, value),) = data.items()
        if kind == "constant":
            try:
                time_level(as_time(value))
            except (SpaceError, TypeError, ValueError) as e:
                raise ConfigError(f"{location}: {e}") from e
            return cls(kind=kind, value=str(value))
        if kind == "hitting":
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{location}: hitting level must be a number")
            return cls(kind=kind, value=float(value))
        raise ConfigError(f"{location}: unknown stopping time kind {kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything one run needs.

    The instance comes from ``instance`` (a JSON file) or from ``generator``
    with ``seed`` and ``depth``. ``levels`` defaults to 1..depth.
    """

    experiment: str
    generator: str | None = "ground_truth"
    instance: Path | None = None
    seed: int | None = None
    seeds: int = 1
    depth: int | None = None
    levels: tuple[int, ...] | None = None
    predictable_level: int = 1
    thresholds: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    stopping_times: tuple[StoppingSpec, ...] = ()
    times: tuple[str, ...] = ("1",)
    out: Path = Path("reports")
    tolerance: float = RECOVERY_TOL

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.experiment not in EXPERIMENT_NAMES:
            raise ConfigError(
                f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENT_NAMES)}"
            )
        if self.instance is None:
            if self.generator not in GENERATORS:
                raise ConfigError(
                    f"unknown generator {self.generator!r}; choose from {', '.join(GENERATORS)}"
                )
            if self.seed is None:
                raise ConfigError("seed is required when generating an instance")
            if self.depth is None:
                raise ConfigError("depth is required when generating an instance")
            limit = MAX_WALK_DEPTH if self.generator == "squared_walk" else MAX_TREE_DEPTH
            if not 1 <= self.depth <= limit:
                raise ConfigError(f"depth {self.depth} outside 1..{limit} for {self.generator}")
            if not 1 <= self.predictable_level <= self.depth:
                raise ConfigError(
                    f"predictable_level {self.predictable_level} outside 1..{self.depth}"
                )
        if self.seed is not None and self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.seeds < 1:
            raise ConfigError(f"seeds must be >= 1, got {self.seeds}")
        if self.levels is not None:
            if not self.levels or any(b <= a for a, b in zip(self.levels, self.levels[1:])):
                raise ConfigError(f"levels must be increasing, got {list(self.levels)}")
            if self.levels[0] < 1 or (self.depth is not None and self.levels[-1] > self.depth):
                raise ConfigError(f"levels {list(self.levels)} outside 1..{self.depth}")
        if not self.thresholds or any(c <= 0 for c in self.thresholds):
            raise ConfigError("thresholds must be positive")
        if self.tolerance <= 0:
            raise ConfigError(f"tolerance must be positive, got {self.tolerance}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        """Build a config from decoded JSON; unknown keys are rejected."""
        if not isinstance(data, Mapping):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "experiment" not in data:
            raise ConfigError("missing key 'experiment'")

        values: dict[str, Any] = dict(data)
        try:
            for key in ("seed", "seeds", "depth", "predictable_level"):
                if key in values and values[key] is not None:
                    values[key] = _integer(values[key], key)
            if values.get("instance") is not None:
                values["instance"] = Path(values["instance"])
                values.setdefault("generator", None)
            if "out" in values:
                values["out"] = Path(values["out"])
            if values.get("levels") is not None:
                values["levels"] = tuple(_integer(v, "levels") for v in values["levels"])
            if "thresholds" in values:
                values["thresholds"] = tuple(float(c) for c in values["thresholds"])
            if "times" in values:
                values["times"] = tuple(str(t) for t in values["times"])
            if "tolerance" in values:
                values["tolerance"] = float(values["tolerance"])
            values["stopping_times"] = tuple(
                StoppingSpec.from_dict(spec, f"stopping_times[{i}]")
                for i, spec in enumerate(values.get("stopping_times", ()))
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"malformed config: {e}") from e
        return cls(**values)

    @classmethod
    def from_file(cls, file_path: str | Path, experiment: str | None = None) -> "ExperimentConfig":
        path = Path(file_path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {file_path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ConfigError(f"Failed to read config: {e}") from e
        if experiment is not None and isinstance(data, dict):
            data = {**data, "experiment": experiment}
        return cls.from_dict(data)

    def with_overrides(
        self, depth: int | None = None, seed: int | None = None, out: Path | None = None
    ) -> "ExperimentConfig":
        """Flags win over the file."""
        changes: dict[str, Any] = {}
        if depth is not None:
            changes["depth"] = depth
        if seed is not None:
            changes["seed"] = seed
        if out is not None:
            changes["out"] = Path(out)
        return replace(self, **changes) if changes else self

    def level_list(self, depth: int) -> tuple[int, ...]:
        levels = self.levels if self.levels is not None else tuple(range(1, depth + 1))
        if levels[-1] > depth:
            raise ConfigError(f"levels {list(levels)} exceed the instance depth {depth}")
        return levels


def _integer(value: Any, key: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    return value


def threads_from_env(environ: Mapping[str, str] | None = None) -> int:
    """Worker cap from DM_LAB_THREADS: a positive integer, 1 when unset."""
    environ = os.environ if environ is None else environ
    raw = environ.get(THREADS_VARIABLE)
    if raw is None or raw.strip() == "":
        return 1
    try:
        threads = int(raw)
    except ValueError as e:
        raise ConfigError(f"{THREADS_VARIABLE} must be a positive integer, got {raw!r}") from e
    if threads < 1:
        raise ConfigError(f"{THREADS_VARIABLE} must be a positive integer, got {raw!r}")
    return threads
