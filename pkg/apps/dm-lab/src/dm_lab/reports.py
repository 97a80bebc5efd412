"""Deterministic CSV and JSON report writers."""

import csv
import json
import logging
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from doob_meyer.filtered_space import format_time

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CsvReport:
    name: str
    header: tuple[str, ...]
    rows: tuple[tuple[Any, ...], ...]


@dataclass(frozen=True)
class JsonReport:
    name: str
    data: Any


Report = CsvReport | JsonReport


def format_cell(value: Any) -> str:
    """17 significant digits for floats, true/false, j/2^n for times, '' for None."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, Fraction):
        return format_time(value)
    if isinstance(value, (float, np.floating)):
        # no negative zero
        return format(float(value) + 0.0, ".17g")
    return str(value)


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    if isinstance(value, Fraction):
        return format_time(value)
    if isinstance(value, Path):
        return value.as_posix()
    return value


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
    return path


def write_json(path: Path, data: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(data), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def write_reports(out: Path, reports: Sequence[Report]) -> list[Path]:
    """Write every report under ``out`` in order; returns the written paths."""
    written = []
    for report in reports:
        if isinstance(report, CsvReport):
            path = write_csv(out / f"{report.name}.csv", report.header, report.rows)
        else:
            path = write_json(out / f"{report.name}.json", report.data)
        logger.info("wrote %s", path)
        written.append(path)
    return written
