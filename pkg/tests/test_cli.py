import csv
import json

import numpy as np
import pytest

from fracbench.cli import main
from fracbench.factorial import FactorialTable
from fracbench.simloop import SimConfig
from fracbench.tuning import TuningResult


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def read_json(path):
    return json.loads(path.read_text())


def test_help_and_bad_usage(capsys):
    assert main(["--help"]) == 0
    assert main([]) == 1
    assert main(["simulate", "--bogus"]) == 1


def test_tune_feasible(tmp_path, capsys):
    spec = write(tmp_path / "spec.json", {"phase_margin": 75.0, "gain_crossover": 1.94})
    out = tmp_path / "tune"
    assert main(["tune", spec, "--family", "fopid", "--out", str(out)]) == 0
    result = TuningResult.from_dict(read_json(out / "tuning.json"))
    assert result.feasible
    assert "phase margin" in (out / "margins.txt").read_text()
    manifest = read_json(out / "manifest.json")
    assert manifest["command"] == "tune" and manifest["seed"] == 42
    assert manifest["config"]["spec"]["phase_margin"] == 75.0


def test_tune_infeasible_exit_code(tmp_path, capsys):
    spec = write(tmp_path / "spec.json", {"phase_margin": 89.0, "gain_crossover": 100.0})
    assert main(["tune", spec, "--family", "iopid", "--out", str(tmp_path / "o")]) == 2
    assert "phase_margin" in capsys.readouterr().err


def test_tune_missing_file(tmp_path, capsys):
    assert main(["tune", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1
    assert "nope.json" in capsys.readouterr().err


def test_simulate_preset(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--preset", "fopid", "--out", str(out)]) == 0
    data = read_json(out / "metrics.json")
    assert data["controller"]["name"] == "FOPID"
    assert set(data["metrics"]) == {"ise", "step_std", "control_mean", "control_std"}
    with open(out / "trace.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["t", "r", "y", "y_meas", "e", "u_raw", "u_applied"]
    manifest = read_json(out / "manifest.json")
    assert SimConfig.from_dict(manifest["config"]["sim"]) == SimConfig()
    assert sorted(manifest["outputs"]) == ["metrics.json", "trace.csv"]


def test_simulate_energy_ordering(tmp_path):
    means = {}
    for name in ("fopid", "simc"):
        assert main(["simulate", "--preset", name, "--out", str(tmp_path / name)]) == 0
        means[name] = read_json(tmp_path / name / "metrics.json")["metrics"]["control_mean"]
    assert means["simc"] > means["fopid"]


def test_simulate_disturbance_flag(tmp_path):
    out = tmp_path / "c"
    assert main(["simulate", "--preset", "iopid", "--factor-c", "--out", str(out)]) == 0
    base = tmp_path / "n"
    assert main(["simulate", "--preset", "iopid", "--out", str(base)]) == 0
    a = np.loadtxt(out / "trace.csv", delimiter=",", skiprows=1)
    b = np.loadtxt(base / "trace.csv", delimiter=",", skiprows=1)
    diff = a[:, 6] - b[:, 6]
    first = np.flatnonzero(diff)[0]
    assert a[first, 0] == pytest.approx(15.0)


def test_simulate_controller_file_and_config(tmp_path, monkeypatch):
    ctrl = write(tmp_path / "c.json", {"name": "mine", "k": 0.5, "tau_i": 1.0, "tau_d": 0.0})
    cfg = write(tmp_path / "cfg.json", SimConfig(horizon=20.0).to_dict())
    monkeypatch.setenv("FRACBENCH_OUTDIR", str(tmp_path / "env"))
    assert main(["simulate", "--controller", ctrl, "--config", cfg]) == 0
    assert (tmp_path / "env" / "trace.csv").exists()
    assert len((tmp_path / "env" / "trace.csv").read_text().splitlines()) == 2002


def test_simulate_errors(tmp_path, capsys):
    assert main(["simulate", "--preset", "pid", "--out", str(tmp_path)]) == 1
    assert main(["simulate", "--out", str(tmp_path)]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["simulate", "--controller", str(bad), "--out", str(tmp_path)]) == 1
    assert "bad.json" in capsys.readouterr().err


def test_doe_outputs(tmp_path):
    out = tmp_path / "doe"
    assert main(["doe", "--preset", "fopid", "--replicates", "2", "--out", str(out)]) == 0
    table = FactorialTable.read_csv(out / "factorial.csv")
    assert len(table.rows) == 16
    with open(out / "influence.csv") as fh:
        rows = list(csv.DictReader(fh))
    for metric in {r["metric"] for r in rows}:
        total = sum(float(r["percentage"]) for r in rows if r["metric"] == metric)
        assert total == pytest.approx(100.0, abs=0.01)
    with open(out / "mf.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 4 * 7 * 8
    assert read_json(out / "manifest.json")["config"]["replicates"] == 2


def test_doe_replicates_zero(tmp_path):
    assert main(["doe", "--preset", "fopid", "--replicates", "0", "--out", str(tmp_path)]) == 1


def test_doe_replay(tmp_path):
    out = tmp_path / "replay"
    assert main(["doe", "--replay-paper", "--out", str(out)]) == 0
    with open(out / "published_influence.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 84
    assert {"computed", "published", "difference"} <= set(rows[0])
    with open(out / "published_mf.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 672


def test_report_orders_presets(tmp_path, capsys):
    runs = tmp_path / "runs"
    for name in ("iopid", "fopid", "simc"):
        assert main(["simulate", "--preset", name, "--out", str(runs / name)]) == 0
    assert main(["doe", "--preset", "simc", "--replicates", "1", "--out", str(runs / "d")]) == 0
    capsys.readouterr()
    assert main(["report", str(runs)]) == 0
    with open(runs / "summary.csv") as fh:
        rows = list(csv.reader(fh))
    assert [r[0] for r in rows[1:]] == ["FOPID", "SIMC PID", "IOPID"]
    assert rows[0] == ["controller", "k", "tau_i", "tau_d", "lambda", "mu", "ise", "control_mean"]
    with open(runs / "influence_matrix.csv") as fh:
        matrix = list(csv.reader(fh))
    assert matrix[0] == ["metric", "effect", "SIMC PID"] and len(matrix) == 29
    assert "FOPID" in (runs / "summary.txt").read_text()


def test_report_single_run(tmp_path):
    assert main(["simulate", "--preset", "iopid", "--out", str(tmp_path / "one")]) == 0
    assert main(["report", str(tmp_path), "--out", str(tmp_path / "rep")]) == 0
    assert len((tmp_path / "rep" / "summary.csv").read_text().splitlines()) == 2


def test_report_errors(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["report", str(empty)]) == 1
    assert main(["report", str(tmp_path / "missing")]) == 1
    bad = tmp_path / "bad" / "x"
    bad.mkdir(parents=True)
    (bad / "metrics.json").write_text("{not json")
    capsys.readouterr()
    assert main(["report", str(tmp_path / "bad")]) == 1
    assert "metrics.json" in capsys.readouterr().err


def test_reproducible_csv_bytes(tmp_path):
    for sub in ("a", "b"):
        assert main(["simulate", "--preset", "fopid", "--factor-b", "--seed", "7",
                     "--out", str(tmp_path / sub)]) == 0
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    assert b"\r" not in (tmp_path / "a" / "trace.csv").read_bytes()
