import json
import subprocess
import sys

import pytest

from cfcc import cli, reservoir


def _write(tmp_path, text):
    p = tmp_path / "case.ini"
    p.write_text(text)
    return p


def test_invert_prints_cdf_and_pdf(capsys):
    assert cli.main(["invert", "exponential(1)", "1"]) == 0
    out = capsys.readouterr().out
    assert "F(1) = 0.632120559" in out
    assert "p(1) = 0.367879441" in out


def test_invert_mixture_symmetry(capsys):
    assert cli.main(["invert", "mix(0.5*normal(-1, 1) + 0.5*normal(1, 1))", "0"]) == 0
    assert "F(0) = 0.5 " in capsys.readouterr().out


@pytest.mark.parametrize("argv", [["invert", "poisson(3)", "0"], ["invert", "normal(0, 1)", "0", "--tol", "-1"]])
def test_invert_bad_input_exits_2(argv, capsys):
    assert cli.main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_unreachable_tolerance_exits_3(capsys):
    assert cli.main(["invert", "cauchy(0, 1)", "3", "--tol", "1e-300"]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_run_writes_outputs(tmp_path, capsys):
    cfg = _write(tmp_path, "[case]\nhorizon = 2\nduration_hours = 2\n")
    out = tmp_path / "out"
    assert cli.main(["run", str(cfg), "--out", str(out), "--seed", "7"]) == 0
    meta, table = reservoir.read_data_file(out / "lakes.dat")
    assert meta["seed"] == "7" and table.shape == (2, 13)
    assert json.loads((out / "summary.json").read_text())["seed"] == 7


def test_run_with_bad_config_exits_2(tmp_path, capsys):
    cfg = _write(tmp_path, "[case]\ngamma_flood = 1.2\n")
    assert cli.main(["run", str(cfg), "--out", str(tmp_path)]) == 2
    assert "gamma_flood" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "missing.ini")]) == 2


def test_validate_writes_report(tmp_path, capsys):
    cfg = _write(tmp_path, "[case]\nhorizon = 2\nduration_hours = 2\n")
    report = tmp_path / "mc.json"
    assert cli.main(["validate", str(cfg), "--runs", "2", "--out", str(report)]) == 0
    captured = capsys.readouterr()
    assert captured.out.count("flood violation") == 3
    assert "wide confidence intervals" in captured.err
    assert json.loads(report.read_text())["runs"] == 2


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "cfcc.cli", "invert", "normal(0, 1)", "0"], capture_output=True, text=True)
    assert res.returncode == 0 and "F(0) = 0.5 " in res.stdout
