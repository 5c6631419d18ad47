"""
CSV ingestion and JSON report emission.

Reports are JSON objects carrying a ``schema_version`` and a ``timestamp``;
tabular side products (coefficient curves, Q-Q pairs) go to CSV files
next to the report.
"""
from __future__ import annotations

import csv
import json
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from tvreg.exceptions import DataError, DomainError
from tvreg.locfit import RegressionData

__all__ = [
    "SCHEMA_VERSION",
    "ingest_csv",
    "read_table",
    "write_table",
    "write_regression_csv",
    "emit_report",
    "load_report",
    "canonical_json",
    "curve_table",
    "to_jsonable",
]

SCHEMA_VERSION = "1.0"


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Header and numeric body of a CSV file; errors name the offending cell."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} fields, header has {len(header)}"
                )
            values = []
            for col, cell in zip(header, row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, column {col!r}: cannot parse {cell!r} as a number"
                    ) from None
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return header, np.array(rows, dtype=float)


def write_table(path, header: Sequence[str], rows: np.ndarray) -> Path:
    """Write a numeric table with shortest round-trip float formatting."""
    path = Path(path)
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])
    return path


def write_regression_csv(path, data: RegressionData, response: str = "y") -> Path:
    names = list(data.column_names) or [f"x{j + 1}" for j in range(data.p)]
    return write_table(path, [response] + names, np.column_stack([data.y, data.X]))


def _standardize(col: np.ndarray, name: str) -> np.ndarray:
    sd = col.std()
    if not sd > 0.0:
        raise DataError(f"column {name!r} is constant and cannot be standardized")
    z = (col - col.mean()) / sd
    # one correction pass pushes the mean and variance to rounding level
    z -= z.mean()
    return z / z.std()


def ingest_csv(
    path,
    response: str,
    predictors: Sequence[str] | None = None,
    lags: Sequence[int] = (),
    standardize: bool = False,
    intercept: bool = False,
) -> RegressionData:
    """
    Load a regression sample from a CSV file with a header row.

    Parameters
    ----------
    path : path-like
    response : str
        Name of the response column.
    predictors : sequence of str, optional
        Predictor columns; all remaining columns by default.
    lags : sequence of int
        Lags of the response appended as extra columns. The first
        ``max(lags)`` rows are dropped.
    standardize : bool
        Scale every used column to mean zero and unit variance before
        lagging.
    intercept : bool
        Prepend a column of ones.
    """
    header, body = read_table(path)
    if response not in header:
        raise DataError(f"response column {response!r} not in header {header}")
    if predictors is None:
        predictors = [h for h in header if h != response]
    missing = [c for c in predictors if c not in header]
    if missing:
        raise DataError(f"predictor columns not found: {missing}")
    lags = sorted(set(int(k) for k in lags))
    if lags and lags[0] < 1:
        raise DomainError("lags must be positive")
    names = [response] + list(predictors)
    cols = [body[:, header.index(c)] for c in names]
    if standardize:
        cols = [_standardize(c, name) for c, name in zip(cols, names)]
    y, X = cols[0], list(cols[1:])
    col_names = list(predictors)
    drop = lags[-1] if lags else 0
    if drop >= y.size:
        raise DataError(f"lag {drop} leaves no rows")
    for k in lags:
        X.append(y[drop - k : y.size - k])
        col_names.append(f"{response}_lag{k}")
    n = y.size - drop
    X = [c[c.size - n :] for c in X]
    if intercept:
        X.insert(0, np.ones(n))
        col_names.insert(0, "intercept")
    if not X:
        raise DataError("no predictor columns")
    return RegressionData(y[drop:], np.column_stack(X), tuple(col_names))


def to_jsonable(obj):
    """Recursively convert numpy values; non-finite floats become ``None``."""
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    return obj


def canonical_json(report: Mapping, drop_timestamp: bool = True) -> str:
    """Sorted, indented JSON; the timestamp is dropped for comparisons."""
    body = {k: v for k, v in report.items() if not (drop_timestamp and k == "timestamp")}
    return json.dumps(to_jsonable(body), sort_keys=True, indent=2)


def emit_report(
    result: Mapping,
    path,
    curves: Mapping[str, tuple[Sequence[str], np.ndarray]] | None = None,
) -> Path:
    """
    Write ``result`` as a JSON report and optional CSV side tables.

    Each entry ``name -> (header, rows)`` of ``curves`` is written to
    ``<stem>_<name>.csv`` beside the report and listed under ``"files"``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report = {"schema_version": SCHEMA_VERSION}
    report.update(to_jsonable(dict(result)))
    files = {}
    for name, (header, rows) in (curves or {}).items():
        target = path.with_name(f"{path.stem}_{name}.csv")
        write_table(target, header, rows)
        files[name] = target.name
    if files:
        report["files"] = files
    report["timestamp"] = datetime.now(timezone.utc).isoformat()
    path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def load_report(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def curve_table(fit, names: Sequence[str] = ()) -> tuple[list[str], np.ndarray]:
    """Coefficient curves of a fit as (header, rows) with the grid first."""
    names = list(names) or [f"beta{j + 1}" for j in range(fit.p)]
    return ["t"] + [f"beta_{c}" for c in names], np.column_stack([fit.grid.points, fit.beta])
