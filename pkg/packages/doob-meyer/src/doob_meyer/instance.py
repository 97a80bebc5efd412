"""Reading and writing filtered-space instances as JSON."""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .filtered_space import FiniteFilteredSpace, SpaceError, format_time
from .processes import AdaptedProcess, NotAdaptedError


class InstanceError(ValueError):
    """Schema violation in an instance file, with the JSON path of the first one."""

    def __init__(self, message: str, location: str = "$"):
        super().__init__(f"{location}: {message}")
        self.location = location


@dataclass(frozen=True, eq=False)
class Instance:
    space: FiniteFilteredSpace
    process: AdaptedProcess | None = None


def read_instance(file_path: str | Path) -> Instance:
    """
    Load a space, and optionally a process on it, from a JSON file.

    The document holds ``atoms``, ``probs``, ``depth`` and ``partitions``
    (a list of blocks of atom indices per time ``"j/2^n"``), and optionally
    ``process`` with a ``level`` and one per-atom vector per time of that grid.

    Args:
        file_path: Path to the instance file

    Returns:
        The parsed instance

    Raises:
        FileNotFoundError: If the file doesn't exist
        InstanceError: On the first schema violation, naming its location
    """
    path = Path(file_path)

    if not path.exists():
        raise FileNotFoundError(f"Instance file not found: {file_path}")

    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise InstanceError(f"Failed to read instance: {e}") from e
    return parse_instance(document)


def parse_instance(document: Any) -> Instance:
    """Validate an already-decoded instance document."""
    if not isinstance(document, dict):
        raise InstanceError("expected an object")
    for key in ("atoms", "probs", "depth", "partitions"):
        if key not in document:
            raise InstanceError(f"missing key {key!r}")

    atoms = document["atoms"]
    if not isinstance(atoms, list) or not all(isinstance(a, str) for a in atoms):
        raise InstanceError("expected a list of strings", location="atoms")
    probs = document["probs"]
    _check_numbers(probs, "probs")
    depth = document["depth"]
    if not isinstance(depth, int) or isinstance(depth, bool):
        raise InstanceError("expected an integer", location="depth")

    partitions = document["partitions"]
    if not isinstance(partitions, dict):
        raise InstanceError("expected an object keyed by time", location="partitions")
    for key, blocks in partitions.items():
        location = f'partitions["{key}"]'
        if not isinstance(blocks, list):
            raise InstanceError("expected a list of blocks", location=location)
        for b, block in enumerate(blocks):
            if not isinstance(block, list) or not all(
                isinstance(a, int) and not isinstance(a, bool) for a in block
            ):
                raise InstanceError("expected a list of atom indices", location=f"{location}[{b}]")

    try:
        space = FiniteFilteredSpace.from_partitions(atoms, probs, depth, partitions)
    except SpaceError as e:
        raise InstanceError(str(e), location=e.location or "$") from e

    process = document.get("process")
    if process is None:
        return Instance(space=space)
    return Instance(space=space, process=_parse_process(space, process))


def _check_numbers(values: Any, location: str):
    if not isinstance(values, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in values
    ):
        raise InstanceError("expected a list of numbers", location=location)


def _parse_process(space: FiniteFilteredSpace, process: Any) -> AdaptedProcess:
    if not isinstance(process, dict):
        raise InstanceError("expected an object", location="process")
    level = process.get("level")
    if not isinstance(level, int) or isinstance(level, bool) or not 1 <= level <= space.depth:
        raise InstanceError(f"expected an integer in 1..{space.depth}", location="process.level")
    values = process.get("values")
    if not isinstance(values, dict):
        raise InstanceError("expected an object keyed by time", location="process.values")

    grid = space.grid(level)
    rows: list[list[float] | None] = [None] * len(grid)
    for key, row in values.items():
        location = f'process.values["{key}"]'
        try:
            k = grid.index(key)
        except SpaceError as e:
            raise InstanceError(str(e), location=location) from e
        _check_numbers(row, location)
        if len(row) != space.n_atoms:
            raise InstanceError(
                f"expected {space.n_atoms} values, got {len(row)}", location=location
            )
        rows[k] = row
    for t, row in zip(grid.times, rows):
        if row is None:
            raise InstanceError(f"no values at t={format_time(t)}", location="process.values")

    try:
        return AdaptedProcess.from_atoms(space, level, rows)
    except NotAdaptedError as e:
        location = f'process.values["{format_time(e.time)}"]' if e.time is not None else "process"
        raise InstanceError(str(e), location=location) from e
    except ValueError as e:
        raise InstanceError(str(e), location="process.values") from e


def instance_document(space: FiniteFilteredSpace, process: AdaptedProcess | None = None) -> dict:
    """The JSON document for a space and an optional process."""
    document: dict[str, Any] = {
        "atoms": list(space.atoms),
        "probs": [float(p) for p in space.probs],
        "depth": space.depth,
        "partitions": {
            format_time(t): [list(block) for block in space.blocks(t)] for t in space.grid().times
        },
    }
    if process is not None:
        process.check_space(space)
        document["process"] = {
            "level": process.level,
            "values": {
                format_time(t): [float(v) for v in np.asarray(process.at(space, t))]
                for t in process.times
            },
        }
    return document


def write_instance(
    file_path: str | Path, space: FiniteFilteredSpace, process: AdaptedProcess | None = None
) -> Path:
    """Write an instance that :func:`read_instance` reads back unchanged."""
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(instance_document(space, process), sort_keys=True, indent=2)
    path.write_text(text + "\n", encoding="utf-8")
    return path
