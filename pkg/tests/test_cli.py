import json
import shutil
import subprocess
import sys

import pytest

from intec.harness.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from intec.harness.suite import read_csv


@pytest.fixture
def cell(tmp_path):
    path = tmp_path / "cell.yaml"
    path.write_text("variant: InTec\nsensors: 3\nusers: 3\nduration: 3\nrepeats: 1\n")
    return path


def test_run_writes_one_row(cell, tmp_path, capsys):
    out = tmp_path / "row.csv"
    assert main(["run", "--config", str(cell), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out)
    assert len(rows) == 1 and rows[0].variant == "InTec" and rows[0].sensors == 3


def test_run_prints_csv_to_stdout(cell, capsys):
    assert main(["run", "--config", str(cell)]) == EXIT_OK
    assert capsys.readouterr().out.startswith("variant,reduction_model,")


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("variant: Fog\n")
    assert main(["run", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["run", "--config", str(tmp_path / "absent.yaml")]) == EXIT_CONFIG
    assert main(["report", "--csv", str(tmp_path / "absent.csv")]) == EXIT_CONFIG
    assert main(["train", "--dataset", str(tmp_path / "nothing")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_runtime_errors_exit_3(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    cfg = tmp_path / "cell.yaml"
    cfg.write_text(f"dataset: {empty}\nsensors: 1\nusers: 0\nduration: 1\nrepeats: 1\n")
    assert main(["run", "--config", str(cfg)]) == EXIT_RUNTIME
    assert main(["train", "--dataset", "synthetic", "--epochs", "2", "--test-window", "50"]
                ) == EXIT_RUNTIME
    assert "ShapeMismatch" in capsys.readouterr().err


def test_train_reports_metrics(tmp_path, capsys):
    out = tmp_path / "model.intc"
    assert main(["train", "--dataset", "synthetic", "--epochs", "15", "--out", str(out)]
                ) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["accuracy"] >= 0.95 and report["k"] == 7
    assert report["artifact_bytes"] == out.stat().st_size
    assert out.read_bytes()[:4] == b"INTC"


def test_suite_and_report(tmp_path, capsys):
    csv_path = tmp_path / "exp1.csv"
    args = ["suite", "--experiment", "1", "--duration", "2", "--repeats", "1",
            "--out", str(csv_path)]
    assert main(args) == EXIT_OK
    rows = read_csv(csv_path)
    assert len(rows) == 16
    assert {r.reduction_rate for r in rows} == {0.24, 0.66}
    capsys.readouterr()
    assert main(["report", "--csv", str(csv_path), "--svg", str(tmp_path / "svg")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "latency_ms=" in out and out.count(".svg") == 12


def test_console_script_is_installed(cell):
    exe = shutil.which("intec")
    cmd = [exe] if exe else [sys.executable, "-m", "intec.harness.cli"]
    proc = subprocess.run(cmd + ["run", "--config", str(cell)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.count("\n") == 2
