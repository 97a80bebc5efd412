"""Tests for the report writers."""

from fractions import Fraction
from pathlib import Path

import numpy as np

from dm_lab.reports import CsvReport, JsonReport, format_cell, write_reports


class TestFormatCell:
    """Tests for format_cell."""

    def test_floats_keep_every_digit(self):
        """Test 17 significant digits and no trailing zeros."""
        assert format_cell(0.1) == "0.10000000000000001"
        assert format_cell(2.5) == "2.5"
        assert format_cell(np.float64(1 / 3)) == "0.33333333333333331"

    def test_negative_zero(self):
        """Test that -0.0 is written as 0."""
        assert format_cell(-0.0) == "0"

    def test_other_types(self):
        """Test booleans, integers, times and missing values."""
        assert format_cell(True) == "true"
        assert format_cell(np.bool_(False)) == "false"
        assert format_cell(np.int64(7)) == "7"
        assert format_cell(Fraction(3, 4)) == "3/2^2"
        assert format_cell(None) == ""
        assert format_cell("sup") == "sup"


class TestWriteReports:
    """Tests for write_reports."""

    def test_csv_and_json(self, tmp_path):
        """Test file names, line endings and JSON layout."""
        reports = [
            CsvReport(name="table", header=("t", "gap"), rows=((Fraction(1, 2), 0.25),)),
            JsonReport(name="summary", data={"b": np.float64(1.5), "a": [Path("x/y"), None]}),
        ]
        paths = write_reports(tmp_path / "out", reports)

        assert [p.name for p in paths] == ["table.csv", "summary.json"]
        assert paths[0].read_bytes() == b"t,gap\n1/2^1,0.25\n"
        assert paths[1].read_text(encoding="utf-8") == (
            '{\n  "a": [\n    "x/y",\n    null\n  ],\n  "b": 1.5\n}\n'
        )
