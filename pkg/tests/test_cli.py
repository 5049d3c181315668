"""Tests for the command-line front end and its exit-code contract."""

import json
import subprocess
import sys
from pathlib import Path

import pytest

from mazt.cli import main

PASSING_ENVELOPE = """
kind = "envelope"

[grid]
n = 32

[background]
density = "1 + 0.5*cos(2*pi*x)"
"""


def write_config(tmp_path, text, name="scenario.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_exit_zero_on_all_checks_passing(tmp_path, capsys):
    config = write_config(tmp_path, PASSING_ENVELOPE)
    out = tmp_path / "out"
    code = main(["envelope", "--config", str(config), "--out", str(out)])
    assert code == 0

    lines = capsys.readouterr().out.splitlines()
    assert lines[-1] == f"summary: {out / 'summary.json'}"
    check_lines = lines[:-1]
    names = [line.split("] ", 1)[1].split(":", 1)[0] for line in check_lines]
    assert names == sorted(names)
    assert any(line.startswith("[PASS] zero_envelope: value=") for line in check_lines)
    assert all(line.startswith(("[PASS]", "[INFO]")) for line in check_lines)
    assert "threshold=" in check_lines[0]


def test_exit_two_on_check_failure(tmp_path, capsys):
    # exhaustion tolerance far below the discretization error of a 32-grid
    text = """
kind = "hele-shaw"

[grid]
n = 32

[background]
density = 1.0

[hele_shaw]
lambdas = [0.2, 0.4]
area_tol = 0.001

[divisor]
points = [[0.5, 0.5, 1.0]]
"""
    config = write_config(tmp_path, text)
    code = main(["hele-shaw", "--config", str(config), "--out", str(tmp_path / "out")])
    assert code == 2

    captured = capsys.readouterr()
    assert any(line.startswith("[FAIL] exhaustion:") for line in captured.out.splitlines())
    assert captured.err == ""
    summary = json.loads((tmp_path / "out" / "summary.json").read_text(encoding="utf-8"))
    assert summary["exit_code"] == 2


def test_exit_three_on_solver_failure(tmp_path, capsys):
    text = """
kind = "solve"

[grid]
n = 32

[background]
density = "1 + 2*cos(2*pi*x)"

[solver]
max_iters = 1

[solve]
beta = [1024.0]
"""
    config = write_config(tmp_path, text)
    code = main(["solve", "--config", str(config), "--out", str(tmp_path / "out")])
    assert code == 3

    captured = capsys.readouterr()
    assert captured.err.startswith("error:")
    assert captured.out == ""


class TestExitFourOnConfigError:
    def test_kind_mismatch(self, tmp_path, capsys):
        config = write_config(tmp_path, PASSING_ENVELOPE)
        code = main(["solve", "--config", str(config)])
        assert code == 4
        err = capsys.readouterr().err
        assert err.startswith("error:")
        assert "does not match" in err

    def test_missing_config_file(self, tmp_path, capsys):
        code = main(["envelope", "--config", str(tmp_path / "absent.toml")])
        assert code == 4
        assert "cannot read config" in capsys.readouterr().err

    def test_toml_syntax_error(self, tmp_path, capsys):
        config = write_config(tmp_path, 'kind = "envelope\n')
        code = main(["envelope", "--config", str(config)])
        assert code == 4
        assert "line" in capsys.readouterr().err

    def test_schema_violation(self, tmp_path, capsys):
        text = PASSING_ENVELOPE + '\n[solver]\nnewton_tolerance = 1e-9\n'
        config = write_config(tmp_path, text)
        code = main(["envelope", "--config", str(config)])
        assert code == 4
        assert "newton_tolerance" in capsys.readouterr().err

    def test_runtime_data_error(self, tmp_path, capsys):
        # parses cleanly; the background fails positivity once evaluated
        text = PASSING_ENVELOPE.replace('"1 + 0.5*cos(2*pi*x)"', '"x - 1"')
        config = write_config(tmp_path, text)
        code = main(["envelope", "--config", str(config), "--out", str(tmp_path / "out")])
        assert code == 4
        assert capsys.readouterr().err.startswith("error:")


def test_missing_config_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["envelope"])
    assert excinfo.value.code == 2
    assert "--config" in capsys.readouterr().err


def test_unknown_kind_is_usage_error(tmp_path, capsys):
    config = write_config(tmp_path, PASSING_ENVELOPE)
    with pytest.raises(SystemExit) as excinfo:
        main(["spectral", "--config", str(config)])
    assert excinfo.value.code == 2
    assert "invalid choice" in capsys.readouterr().err


def test_threads_flag_echoed(tmp_path):
    config = write_config(tmp_path, PASSING_ENVELOPE)
    out = tmp_path / "out"
    code = main(["envelope", "--config", str(config), "--out", str(out), "--threads", "4"])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["threads"] == 4


def test_module_invocation_round_trip(tmp_path):
    config = write_config(tmp_path, PASSING_ENVELOPE)
    out = tmp_path / "out"
    proc = subprocess.run(
        [sys.executable, "-m", "mazt", "envelope", "--config", str(config), "--out", str(out)],
        capture_output=True,
        text=True,
        cwd=tmp_path,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.splitlines()[-1] == f"summary: {out / 'summary.json'}"
    assert (out / "u.field").exists()
