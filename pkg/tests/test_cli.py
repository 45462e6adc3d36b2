import csv
import json

import numpy as np
import pytest

from ipbo import cli, tracking
from conftest import tracking_panels

TRACK_FLAGS = ["--train-len", "100", "--test-len", "20", "--target-nnz", "8"]


def _read(path):
    return path.read_bytes()


@pytest.fixture(scope="module")
def panel_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("panels")
    stocks, indices, _ = tracking_panels()
    tracking.write_prices(d / "stocks.csv", stocks)
    tracking.write_prices(d / "indices.csv", indices)
    return d / "stocks.csv", d / "indices.csv"


def test_simulate_smoke(tmp_path):
    out = tmp_path / "sim"
    code = cli.main(["simulate", "--example", "1", "--p", "100", "--q", "50", "--n", "100",
                     "--reps", "2", "--methods", "lasso", "--seed", "7", "--out", str(out)])
    assert code == 0
    rows = list(csv.DictReader((out / "study.csv").open()))
    assert [(r["method"], r["metric"]) for r in rows] == [("lasso", "l2_error"), ("lasso", "mse")]
    assert all(r["reps"] == "2" for r in rows)
    assert json.loads((out / "study.json").read_text())["failures"] == []


def test_simulate_bad_example(tmp_path):
    out = tmp_path / "never"
    assert cli.main(["simulate", "--example", "9", "--out", str(out)]) == 1
    assert not out.exists()


@pytest.mark.parametrize("config, code", [
    ({"schema_version": 1, "example": 2, "p": 10, "q": 4, "n": 30, "methods": "lasso"}, 0),
    ({"schema_version": 2, "example": 2}, 1),
    ({"schema_version": 1, "bogus": 3}, 1),
    ({"schema_version": 1, "methods": "gflasso"}, 1),
    ({"schema_version": 1, "example": 3, "q": 10}, 1),
])
def test_simulate_config(tmp_path, config, code):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(config))
    out = tmp_path / "o"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == code
    assert out.exists() == (code == 0)


def test_fit_demo_artifacts(tmp_path):
    out = tmp_path / "fit"
    assert cli.main(["fit", "--demo", "--method", "sipbo", "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["coefficients.csv", "diagnostics.json", "support.json"]
    rows = list(csv.reader((out / "coefficients.csv").open()))
    assert rows[0][0] == "predictor" and rows[1][0] == "(intercept)"
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["converged"] and diag["method"] == "sipbo"
    support = json.loads((out / "support.json").read_text())
    assert set(support) == set(rows[0][1:])


def test_fit_from_files_fixed_penalty(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((30, 4))
    y = x[:, :2] @ [[1.0], [-2.0]] + 0.1 * rng.standard_normal((30, 1))
    np.savetxt(tmp_path / "x.csv", x, delimiter=",")
    np.savetxt(tmp_path / "y.csv", y, delimiter=",")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"schema_version": 1, "penalty": {"lambda1": 0.5}}))
    out = tmp_path / "o"
    assert cli.main(["fit", "--x", str(tmp_path / "x.csv"), "--y", str(tmp_path / "y.csv"),
                     "--method", "lasso", "--config", str(cfg), "--out", str(out)]) == 0
    support = json.loads((out / "support.json").read_text())
    assert support == {"y1": ["x1", "x2"]}


def test_fit_guard_warning(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"schema_version": 1, "tuning": {
        "lambda1": [0.01, 0.02], "gamma1": [20.0], "gamma2": [20.0]}}))
    out = tmp_path / "o"
    assert cli.main(["fit", "--demo", "--method", "ipbo", "--config", str(cfg),
                     "--out", str(out)]) == 0
    bic = json.loads((out / "diagnostics.json").read_text())["bic"]
    assert bic["guard_warning"] is True
    assert bic["selected_index"] == bic["best_index"]


def test_fit_not_converged_writes_best(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"schema_version": 1, "penalty": {"lambda1": 0.001},
                               "tol": 1e-14, "max_sweeps": 1}))
    out = tmp_path / "o"
    assert cli.main(["fit", "--demo", "--method", "lasso", "--config", str(cfg),
                     "--out", str(out)]) == 3
    assert (out / "coefficients.csv").exists()


def test_fit_missing_y(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["fit", "--x", cli.demo_path("demo_x.csv"), "--out", str(out)]) == 1
    assert not out.exists()


def test_fit_rejects_mixed_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"schema_version": 1, "penalty": {"lambda1": 0.1},
                               "tuning": {"lambda1": 0.1}}))
    assert cli.main(["fit", "--demo", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_track_periods(tmp_path, panel_files):
    stocks, indices = panel_files
    out = tmp_path / "t"
    assert cli.main(["track", "--stocks", str(stocks), "--indices", str(indices),
                     *TRACK_FLAGS, "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "periods.csv").open()))
    assert sorted({r["period"] for r in rows}) == [str(i) for i in range(6)]
    assert list(rows[0]) == list(tracking.TrackingReport.PERIOD_COLUMNS)
    report = json.loads((out / "report.json").read_text())
    assert len(report["periods"]) == 6
    assert not (out / "attribution.csv").exists()


def test_track_zero_target(tmp_path, panel_files):
    stocks, indices = panel_files
    out = tmp_path / "t"
    assert cli.main(["track", "--stocks", str(stocks), "--indices", str(indices),
                     "--target-nnz", "0", "--out", str(out)]) == 1
    assert not out.exists()


def test_track_demo_attribution(tmp_path):
    out = tmp_path / "t"
    assert cli.main(["track", "--stocks", cli.demo_path("demo_stocks.csv"),
                     "--indices", cli.demo_path("demo_indices.csv"), "--train-len", "100",
                     "--test-len", "20", "--target-nnz", "4", "--method", "lasso",
                     "--out", str(out)]) == 0
    rows = list(csv.reader((out / "attribution.csv").open()))
    assert rows[0] == ["predictor_kind", "close", "high", "low", "open"]
    mat = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    assert np.allclose(mat.sum(axis=0), 1.0)


def test_track_repeatable(tmp_path, panel_files):
    stocks, indices = panel_files
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert cli.main(["track", "--stocks", str(stocks), "--indices", str(indices),
                         *TRACK_FLAGS, "--method", "lasso", "--out", str(out)]) == 0
    for name in ("report.json", "periods.csv"):
        assert _read(outs[0] / name) == _read(outs[1] / name)


def test_unknown_subcommand():
    assert cli.main(["frobnicate"]) == 1
