import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from tenrank import cli
from tenrank.cli import main
from tenrank.io import read_series, write_tfms


@pytest.fixture
def m0_file(tmp_path):
    p = tmp_path / "m0.tfms"
    assert main(["simulate", "--model", "M0", "--dims", "12", "10", "--T", "200", "--seed", "3",
                 "-o", str(p)]) == 0
    return p


def test_simulate_formats(tmp_path):
    paths = {}
    for fmt in ("tfms", "csv-long", "csv-wide"):
        p = tmp_path / f"x.{fmt}"
        assert main(["simulate", "--model", "M1", "--dims", "6", "5", "--T", "20", "--seed", "1",
                     "--format", fmt, "-o", str(p)]) == 0
        paths[fmt] = read_series(p).data
    assert paths["tfms"].shape == (20, 6, 5)
    np.testing.assert_array_equal(paths["tfms"], paths["csv-long"])
    np.testing.assert_array_equal(paths["tfms"], paths["csv-wide"])


def test_estimate_outputs(m0_file, tmp_path, capsys):
    js, cs = tmp_path / "r.json", tmp_path / "r.csv"
    assert main(["estimate", str(m0_file), "--json", str(js), "--csv", str(cs), "--h0", "2"]) == 0
    out = capsys.readouterr().out
    assert "IC2-TIPUP" in out and "final=(2, 2)" in out
    rep = json.loads(js.read_text())
    assert rep["schema_version"] == 1 and rep["h0"] == 2
    assert {e["estimator"] for e in rep["estimates"]} == set(cli.DEFAULT_ESTIMATORS)
    assert {r["h0"] for r in rep["tau"]} == {1, 2, 3, 4}
    rows = list(csv.reader(cs.open()))
    assert rows[0] == ["estimator", "stage", "r1", "r2"] and len(rows) == 1 + 4 * 3


def test_experiment(tmp_path, capsys):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(
        "version: 1\n"
        "cells:\n  - model: M0\n    dims: [[8, 6]]\n    T: [100]\n"
        "estimators:\n  - {method: TIPUP, criterion: ER, variant: 1}\n"
        "replications: 4\nseed: 2\n"
    )
    js, cs = tmp_path / "t.json", tmp_path / "t.csv"
    assert main(["experiment", str(cfg), "--replications", "3", "--json", str(js), "--csv", str(cs)]) == 0
    doc = json.loads(js.read_text())
    assert len(doc["rows"]) == 3 and all(r["n"] == 3 for r in doc["rows"])
    assert "correct=" in capsys.readouterr().out
    assert len(list(csv.reader(cs.open()))) == 4


def test_experiment_failed_cell_exit_code(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    # a maximal lag longer than the series makes every replication fail
    cfg.write_text(
        "cells:\n  - model: M0\n    dims: [[8, 6]]\n    T: [50]\n"
        "estimators:\n  - {method: TIPUP, criterion: ER, variant: 1}\n"
        "replications: 2\nh0: 60\n"
    )
    assert main(["experiment", str(cfg)]) == 3


def test_tune_c(m0_file, tmp_path, capsys):
    js, cs = tmp_path / "c.json", tmp_path / "c.csv"
    assert main(["tune-c", str(m0_file), "--m-star", "4", "--mode", "1", "--json", str(js),
                 "--csv", str(cs), "-v"]) == 0
    assert "mode 1: c=" in capsys.readouterr().out
    doc = json.loads(js.read_text())
    (mode,) = doc["modes"]
    assert mode["mode"] == 1 and mode["rank"] == 2
    assert all(s >= 0 for s in mode["stability"])
    rows = list(csv.DictReader(cs.open()))
    assert len(rows) == len(mode["c_grid"]) * 10
    assert main(["tune-c", str(m0_file), "--mode", "3"]) == 2
    assert main(["tune-c", str(m0_file), "--c-grid", "1", "0", "0.1"]) == 2


def test_tune_c_single_value_grid(m0_file, capsys):
    with pytest.warns(UserWarning, match="single-value"):
        assert main(["tune-c", str(m0_file), "--m-star", "4", "--c-grid", "0.5", "0.5", "0.1"]) == 0
    assert "c=0.5" in capsys.readouterr().out


def test_diagnose(m0_file, tmp_path, capsys):
    cs = tmp_path / "d.csv"
    assert main(["diagnose", str(m0_file), "--h0-max", "3", "--csv", str(cs)]) == 0
    rows = list(csv.reader(cs.open()))
    assert rows[0] == ["mode", "method", "h0", "tau1", "tau2", "tau3"]
    assert len(rows) == 1 + 2 * 2 * 3
    assert main(["diagnose", str(m0_file), "--h0-max", "500"]) == 2


def test_input_errors(tmp_path, capsys):
    assert main(["estimate", str(tmp_path / "missing.tfms")]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("t,i1,value\n1,1,2\n1,1,3\n")
    assert main(["estimate", str(bad)]) == 2
    assert "duplicate" in capsys.readouterr().err
    nan = tmp_path / "nan.tfms"
    x = np.ones((5, 2, 2))
    x[2, 1, 1] = np.inf
    write_tfms(nan, x)
    assert main(["estimate", str(nan)]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["estimate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 2
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("- just\n- a list\n")
    assert main(["experiment", str(cfg)]) == 2
    cfg.write_text("cells: [{model: M0}]\n")
    assert main(["experiment", str(cfg)]) == 2


def test_estimate_short_series_is_input_error(tmp_path):
    p = tmp_path / "short.tfms"
    write_tfms(p, np.random.default_rng(0).standard_normal((2, 3, 3)))
    assert main(["estimate", str(p), "--h0", "2"]) == 2


def test_numerical_failure_exit_code(m0_file, monkeypatch):
    def boom(*a, **k):
        raise np.linalg.LinAlgError("SVD did not converge")

    monkeypatch.setattr(cli, "estimate_report", boom)
    assert main(["estimate", str(m0_file)]) == 3


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "tenrank", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "tenrank" in res.stdout
