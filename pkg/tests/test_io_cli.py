import json
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tvreg.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from tvreg.dataio import (
    SCHEMA_VERSION,
    canonical_json,
    curve_table,
    emit_report,
    ingest_csv,
    load_report,
    read_table,
    write_regression_csv,
    write_table,
)
from tvreg.exceptions import DataError, DomainError, ReplicationError
from tvreg.kernels import epanechnikov
from tvreg.locfit import EvaluationGrid, local_linear_fit
from tvreg.processes import simulate_model_i
from tvreg.replication import run_replication
from tvreg.selection import select_subset


@pytest.fixture
def series_csv(tmp_path):
    rng = np.random.default_rng(0)
    body = np.column_stack([rng.standard_normal(730) * 3 + 2, rng.gamma(2.0, size=730), rng.uniform(size=730)])
    path = tmp_path / "series.csv"
    write_table(path, ["y", "a", "b"], body)
    return path, body


def test_standardize_moments(series_csv):
    path, _ = series_csv
    data = ingest_csv(path, "y", standardize=True)
    for col in (data.y, *data.X.T):
        assert abs(col.mean()) < 1e-12
        assert abs(col.var() - 1.0) < 1e-12


def test_lags_and_intercept(series_csv):
    path, body = series_csv
    data = ingest_csv(path, "y", ["a"], lags=(1, 2, 3), intercept=True)
    assert data.n == 727
    assert data.column_names == ("intercept", "a", "y_lag1", "y_lag2", "y_lag3")
    assert np.array_equal(data.y, body[3:, 0])
    assert np.array_equal(data.X[:, 2], body[2:-1, 0])
    assert np.array_equal(data.X[:, 4], body[:-3, 0])
    assert np.array_equal(data.X[:, 1], body[3:, 1])


def test_parse_errors_name_the_cell(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("y,x\n1,2\n3,oops\n")
    with pytest.raises(DataError, match=r"row 3, column 'x'"):
        read_table(bad)
    short = tmp_path / "short.csv"
    short.write_text("y,x\n1\n")
    with pytest.raises(DataError, match="row 2"):
        read_table(short)
    const = tmp_path / "const.csv"
    write_table(const, ["y", "x"], np.column_stack([np.arange(5.0), np.ones(5)]))
    with pytest.raises(DataError, match="constant"):
        ingest_csv(const, "y", standardize=True)
    with pytest.raises(DataError):
        ingest_csv(const, "z")
    with pytest.raises(DomainError):
        ingest_csv(const, "y", lags=(0,))


def test_simulate_roundtrip_is_exact(tmp_path):
    data = simulate_model_i(200, 5).data
    path = write_regression_csv(tmp_path / "m.csv", data)
    back = ingest_csv(path, "y")
    assert np.array_equal(back.y, data.y)
    assert np.array_equal(back.X, data.X)
    assert back.column_names == data.column_names


def test_report_roundtrip(tmp_path):
    data = simulate_model_i(200, 1).data
    fit = local_linear_fit(data, epanechnikov, 0.3, EvaluationGrid.uniform(41))
    rep = select_subset(data, epanechnikov, 0.3)
    path = emit_report({"report": rep.to_dict(), "bad": float("nan")}, tmp_path / "r.json",
                       {"curves": curve_table(fit, data.column_names)})
    loaded = load_report(path)
    assert loaded["schema_version"] == SCHEMA_VERSION
    assert loaded["bad"] is None
    assert tuple(loaded["report"]["chosen"]) == rep.chosen
    header, rows = read_table(tmp_path / loaded["files"]["curves"])
    assert header[0] == "t" and rows.shape == (41, 1 + data.p)
    assert np.array_equal(rows[:, 1:], fit.beta)


def test_canonical_json_ignores_timestamp(tmp_path):
    a = load_report(emit_report({"x": [1.0, 2.0]}, tmp_path / "a.json"))
    b = load_report(emit_report({"x": [1.0, 2.0]}, tmp_path / "b.json"))
    assert canonical_json(a) == canonical_json(b)
    assert "timestamp" in canonical_json(a, drop_timestamp=False)


def test_replication_parallel_matches_sequential():
    over = {"models": ["i"], "bandwidths": [0.3]}
    seq = run_replication("table1", 4, n=150, seed=3, overrides=over)
    par = run_replication("table1", 4, n=150, seed=3, overrides=over, n_jobs=2)
    assert seq.to_dict(include_runtime=False) == par.to_dict(include_runtime=False)
    assert sum(c["percent"] for c in seq.cells) == pytest.approx(100.0)
    with pytest.raises(DomainError):
        run_replication("table9", 1)
    with pytest.raises(DomainError):
        run_replication("table1", 1, overrides={"nope": 1})


def test_replication_failure_names_replicate():
    with pytest.raises(ReplicationError, match="replicate 0"):
        run_replication("table1", 1, n=150, overrides={"models": ["i"], "bandwidths": [0.001]})


def test_cli_pipeline(tmp_path, capsys):
    csv_path = tmp_path / "sim.csv"
    assert main(["--seed", "2", "--out", str(csv_path), "simulate", "--model", "i", "--n", "200"]) == EXIT_OK
    out = tmp_path / "est.json"
    code = main(["--out", str(out), "--grid-size", "21", "estimate", "--input", str(csv_path),
                 "--response", "y", "--bandwidth", "0.3", "--constant", "x3"])
    assert code == EXIT_OK
    rep = load_report(out)
    assert rep["constant_coefficients"]["columns"] == [3]
    assert (tmp_path / rep["files"]["curves"]).is_file()
    assert main(["select", "--input", str(csv_path), "--response", "y", "--bandwidth", "0.3"]) == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    assert printed["report"]["chosen"] == [0, 1, 2]
    code = main(["test", "--input", str(csv_path), "--response", "y", "--bandwidth", "0.3",
                 "--A", "x4", "--calibration", "asymptotic"])
    assert code == EXIT_OK


def test_cli_exit_codes(tmp_path, capsys):
    csv_path = tmp_path / "sim.csv"
    main(["--out", str(csv_path), "simulate", "--model", "i", "--n", "150"])
    base = ["--input", str(csv_path), "--response", "y"]
    assert main(["estimate", "--input", str(tmp_path / "missing.csv"), "--response", "y"]) == EXIT_CONFIG
    assert main(["estimate", *base, "--bandwidth", "1.5"]) == EXIT_CONFIG
    assert main(["--kernel", "nope", "estimate", *base]) == EXIT_CONFIG
    assert main(["test", *base, "--A", "zz", "--bandwidth", "0.3"]) == EXIT_CONFIG
    assert main(["test", *base, "--A", "x1", "--nsim", "10", "--bandwidth", "0.3"]) == EXIT_CONFIG
    assert main(["estimate", *base, "--bandwidth", "0.001"]) == EXIT_NUMERIC
    assert main(["simulate", "--model", "i"]) == EXIT_CONFIG
    assert main(["--out", str(tmp_path / "t.csv"), "simulate", "--model", "tvar", "--ar", "0.9:0.5"]) == EXIT_CONFIG
    with pytest.raises(SystemExit):
        main(["frobnicate"])


@settings(max_examples=3)
@given(st.integers(0, 2**31 - 1))
def test_end_to_end_determinism(tmp_path_factory, seed):
    tmp = tmp_path_factory.mktemp("det")
    csv_path = tmp / "sim.csv"
    reports = []
    for k in range(2):
        main(["--seed", str(seed), "--out", str(csv_path), "simulate", "--model", "ii", "--n", "150"])
        out = tmp / f"r{k}.json"
        code = main(["--seed", str(seed), "--out", str(out), "test", "--input", str(csv_path),
                     "--response", "y", "--bandwidth", "0.4", "--A", "x1", "--nsim", "200"])
        assert code == EXIT_OK
        reports.append(canonical_json(load_report(out)).replace(f"r{k}.json", ""))
    assert reports[0] == reports[1]


HK_PATH = os.environ.get("TVREG_HK_CSV")


@pytest.mark.skipif(not HK_PATH, reason="set TVREG_HK_CSV to the hospital admissions series")
def test_hong_kong_example():
    """Needs columns y, x1, x2, x3 (daily admissions and pollutant levels)."""
    data = ingest_csv(Path(HK_PATH), "y", ["x1", "x2", "x3"], standardize=True, intercept=True)
    assert data.n == 730
    rep = select_subset(data, epanechnikov, 0.13)
    assert round(rep.chi_n, 3) == 0.072
    fit = local_linear_fit(data, epanechnikov, 0.13)
    assert abs(fit.beta[:, 3].mean() - 0.15) < 0.05
