"""Shared helpers for the dm-lab tests."""

import json

import pytest

from dm_lab.main import main


@pytest.fixture
def run_cli(tmp_path, capsys):
    """Run ``dm-lab`` in-process with reports under tmp_path; returns (code, stdout, stderr)."""

    def run(*args, out=None):
        out = tmp_path / "reports" if out is None else out
        code = main([*args, "--out", str(out)])
        captured = capsys.readouterr()
        return code, captured.out, captured.err

    return run


@pytest.fixture
def write_json(tmp_path):
    def write(name, data):
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    return write
