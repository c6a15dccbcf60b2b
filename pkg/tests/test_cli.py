import json
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from scramble import cli
from scramble.core import FitResult
from scramble.io import read_matrix, write_matrix
from scramble.simulation import (
    SimScenario,
    principal_angle,
    replicate_seeds,
    simulate_data,
)
from scramble.stiefel import ConvergenceTrace, DivergenceError

EXACT = ["--lr", "0.01", "--decay", "1", "--tol", "1e-14", "--max-iters", "5000"]


@pytest.fixture(scope="module")
def lowdim_csv(tmp_path_factory):
    scen = SimScenario()
    d, c = replicate_seeds(0, scen, 0)
    X = simulate_data(replace(scen, seed=d), c)[0]
    path = tmp_path_factory.mktemp("data") / "lowdim.csv"
    write_matrix(path, X, [f"x{j}" for j in range(10)])
    return path, X


def run(*argv):
    return cli.main([str(a) for a in argv])


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_fit_outputs(lowdim_csv, tmp_path):
    path, _ = lowdim_csv
    assert run("fit", path, "--k", 2, "--loss", "huber", "--init", "rank", "--lambda", 0.01, "--out-dir", tmp_path) == 0
    L, header = read_matrix(tmp_path / "loadings.csv")
    assert L.shape == (10, 2) and header == ["PC1", "PC2"]
    assert read_matrix(tmp_path / "scores.csv")[0].shape == (50, 2)
    res = FitResult.from_json((tmp_path / "fit.json").read_text())
    np.testing.assert_array_equal(L, res.loadings)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "fit"
    assert manifest["config"]["fit"]["optimizer"]["learning_rate"] == 0.001
    assert manifest["config"]["seed"] == 0


def test_fit_square_matches_external_svd(lowdim_csv, tmp_path):
    path, X = lowdim_csv
    assert run("fit", path, "--loss", "square", "--lambda", 0, "--no-threshold", *EXACT, "--out-dir", tmp_path) == 0
    L = read_matrix(tmp_path / "loadings.csv")[0]
    Xc = X - np.median(X, axis=0)
    assert principal_angle(np.linalg.svd(Xc)[2][:2].T, L) <= 1e-3


def test_csv_text_round_trip(lowdim_csv, tmp_path):
    path, _ = lowdim_csv
    run("fit", path, "--out-dir", tmp_path)
    L, header = read_matrix(tmp_path / "loadings.csv")
    write_matrix(tmp_path / "again.csv", L, header)
    assert (tmp_path / "again.csv").read_bytes() == (tmp_path / "loadings.csv").read_bytes()


def test_fit_errors(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    assert run("fit", missing, "--out-dir", tmp_path) == 2
    assert str(missing) in capsys.readouterr().err
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n3,x\n")
    assert run("fit", bad, "--out-dir", tmp_path) == 2
    err = capsys.readouterr().err
    assert "line 3" in err and "column 2" in err
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("1,2\n3\n")
    assert run("fit", ragged, "--out-dir", tmp_path) == 2
    assert "line 2" in capsys.readouterr().err


def test_fit_bad_flags(lowdim_csv, tmp_path):
    path, _ = lowdim_csv
    assert run("fit", path, "--lambda", "1,2,3", "--out-dir", tmp_path) == 2
    assert run("fit", path, "--k", 11, "--out-dir", tmp_path) == 2
    assert run("fit", path, "--decay", 2, "--out-dir", tmp_path) == 2


def test_fit_nonconvergence_warns(lowdim_csv, tmp_path):
    path, _ = lowdim_csv
    assert run("fit", path, "--max-iters", 2, "--out-dir", tmp_path) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["warnings"] and "max_iters" in manifest["warnings"][0]


def test_fit_divergence_exit_code(lowdim_csv, tmp_path, monkeypatch, capsys):
    def diverge(X, cfg):
        raise DivergenceError("objective became non-finite", ConvergenceTrace(reason="divergence"))

    monkeypatch.setattr(cli, "fit", diverge)
    assert run("fit", lowdim_csv[0], "--out-dir", tmp_path) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_seed_env_fallback(lowdim_csv, tmp_path, monkeypatch):
    path, _ = lowdim_csv
    monkeypatch.setenv("SCRAMBLE_SEED", "42")
    run("fit", path, "--out-dir", tmp_path)
    assert json.loads((tmp_path / "manifest.json").read_text())["config"]["seed"] == 42
    run("fit", path, "--seed", 5, "--out-dir", tmp_path)
    assert json.loads((tmp_path / "manifest.json").read_text())["config"]["seed"] == 5
    monkeypatch.setenv("SCRAMBLE_SEED", "abc")
    assert run("fit", path, "--out-dir", tmp_path) == 2


def test_fit_deterministic(lowdim_csv, tmp_path):
    path, _ = lowdim_csv
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run("fit", path, "--batch-size", 16, "--seed", 3, "--out-dir", d) == 0
    assert files(a) == files(b)


def test_tune_deterministic(lowdim_csv, tmp_path):
    path, _ = lowdim_csv
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run("tune", path, "--k", 2, "--alpha", 0, "--budget", 15, "--seed", 7, "--out-dir", d) == 0
    assert files(a) == files(b)
    log = (a / "tune.csv").read_text().splitlines()
    assert len(log) == 16
    assert {"best_fit.json", "best_loadings.csv", "best_scores.csv", "manifest.json"} <= set(files(a))


def test_tune_grid(lowdim_csv, tmp_path):
    path, _ = lowdim_csv
    assert run("tune", path, "--grid", "0.001,0.01,0.1", "--out-dir", tmp_path) == 0
    assert len((tmp_path / "tune.csv").read_text().splitlines()) == 4
    assert run("tune", path, "--box", "1", "--out-dir", tmp_path) == 2


def test_diagnose_clean(lowdim_csv, tmp_path):
    path, _ = lowdim_csv
    run("fit", path, "--out-dir", tmp_path)
    assert run("diagnose", tmp_path / "fit.json", path, "--out-dir", tmp_path) == 0
    text = (tmp_path / "distances.csv").read_text().splitlines()
    assert text[0] == "row,sd,od,flag" and len(text) == 51
    flags = [line.rsplit(",", 1)[1] for line in text[1:]]
    assert sum(f != "Regular" for f in flags) <= 5
    M, header = read_matrix(tmp_path / "residual_map.csv")
    assert M.shape == (50, 10) and header[0] == "V1"


def test_diagnose_injected_row_tukey(lowdim_csv, tmp_path):
    _, X = lowdim_csv
    Xo = X.copy()
    Xo[7, 2] = 1e6
    data = tmp_path / "inj.csv"
    write_matrix(data, Xo)
    assert run("fit", data, "--loss", "tukey", "--init", "wrap", "--out-dir", tmp_path) == 0
    assert run("diagnose", tmp_path / "fit.json", data, "--out-dir", tmp_path) == 0
    row = (tmp_path / "distances.csv").read_text().splitlines()[8]
    assert row.startswith("8,") and row.rsplit(",", 1)[1] in ("OrthogonalOutlier", "BadLeverage")


def test_diagnose_errors(lowdim_csv, tmp_path):
    path, X = lowdim_csv
    run("fit", path, "--out-dir", tmp_path)
    narrow = tmp_path / "narrow.csv"
    write_matrix(narrow, X[:, :4])
    assert run("diagnose", tmp_path / "fit.json", narrow, "--out-dir", tmp_path) == 2
    junk = tmp_path / "junk.json"
    junk.write_text("{}")
    assert run("diagnose", junk, path, "--out-dir", tmp_path) == 2
    assert run("diagnose", tmp_path / "missing.json", path, "--out-dir", tmp_path) == 2


def test_transform(lowdim_csv, tmp_path):
    path, X = lowdim_csv
    run("fit", path, "--out-dir", tmp_path)
    assert run("transform", tmp_path / "fit.json", path, "--out-dir", tmp_path / "t") == 0
    Z = read_matrix(tmp_path / "t" / "scores.csv")[0]
    stored = FitResult.from_json((tmp_path / "fit.json").read_text()).scores
    np.testing.assert_allclose(Z, stored, rtol=0, atol=1e-10)
    empty = tmp_path / "empty.csv"
    empty.write_text(",".join(f"x{j}" for j in range(10)) + "\n")
    assert run("transform", tmp_path / "fit.json", empty, "--out-dir", tmp_path / "e") == 0
    assert (tmp_path / "e" / "scores.csv").read_text() == "PC1,PC2\n"
    narrow = tmp_path / "narrow.csv"
    write_matrix(narrow, X[:, :3])
    assert run("transform", tmp_path / "fit.json", narrow, "--out-dir", tmp_path) == 2


def test_simulate_preset(tmp_path):
    args = ("simulate", "--preset", "lowdim-cellwise", "--eps", "0.2", "--reps", 2, "--seed", 1)
    assert run(*args, "--out-dir", tmp_path / "a") == 0
    assert run(*args, "--jobs", 2, "--out-dir", tmp_path / "b") == 0
    assert files(tmp_path / "a") == files(tmp_path / "b")
    lines = (tmp_path / "a" / "results.csv").read_text().splitlines()
    assert lines[0] == "scenario,method,loss,init,epsilon,replicate,angle,tpr,tnr,seconds,lambda,error"
    assert len(lines) - 1 == 2 * len(cli.default_methods())


def test_simulate_config(tmp_path):
    cfg = {"scenarios": [{"setting": "lowdim", "contamination": "casewise", "epsilon": 0.1}],
           "methods": [{"name": "svd", "kind": "svd", "loss": "square"},
                       {"name": "lts", "loss": "lts", "init": "rank", "lambda": 0.01}],
           "replicates": 3, "seed": 9}
    path = tmp_path / "study.json"
    path.write_text(json.dumps(cfg))
    assert run("simulate", path, "--out-dir", tmp_path) == 0
    assert len((tmp_path / "results.csv").read_text().splitlines()) == 7
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 9 and manifest["config"]["replicates"] == 3


def test_simulate_invalid_config(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"scenarios": [{"setting": "lowdim", "noise": 1}], "extra": 1,
                                "methods": [{"name": "m", "colour": "red"}]}))
    assert run("simulate", path, "--out-dir", tmp_path) == 2
    err = capsys.readouterr().err
    assert "extra" in err and "scenarios[0].noise" in err and "methods[0].colour" in err
    path.write_text("{not json")
    assert run("simulate", path, "--out-dir", tmp_path) == 2
    assert run("simulate", "--out-dir", tmp_path) == 2
    assert run("simulate", "--preset", "lowdim-clean", "--reps", 0, "--out-dir", tmp_path) == 2


def test_console_entry_point(lowdim_csv, tmp_path):
    out = subprocess.run([sys.executable, "-m", "scramble.cli", "transform", str(tmp_path / "x.json"),
                          str(lowdim_csv[0])], capture_output=True, text=True, check=False)
    assert out.returncode == 2 and "no such file" in out.stderr
