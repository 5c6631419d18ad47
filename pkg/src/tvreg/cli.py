"""
Command line interface: ``tvreg <command> [options]``.

Exit codes: 0 on success, 2 for configuration or input errors, 3 for
numerical failures.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from tvreg.covariance import estimate_covariance
from tvreg.dataio import curve_table, emit_report, ingest_csv, to_jsonable, write_regression_csv, write_table
from tvreg.exceptions import (
    CalibrationError,
    CovarianceError,
    DataError,
    DomainError,
    FitError,
    KernelError,
    ReplicationError,
    StabilityError,
)
from tvreg.kernels import get_kernel
from tvreg.locfit import EvaluationGrid, Hypothesis, local_linear_fit, theorem1_ci
from tvreg.processes import simulate_ar_arch, simulate_model_i, simulate_model_ii, simulate_tvar
from tvreg.replication import TABLES, run_replication
from tvreg.selection import default_chi, gcv_curve, select_bandwidth, select_subset, two_stage_bandwidth
from tvreg.testing import tv_test

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
_CONFIG_ERRORS = (DomainError, DataError, KernelError, StabilityError, FileNotFoundError)
_NUMERIC_ERRORS = (FitError, CovarianceError, CalibrationError, ReplicationError, np.linalg.LinAlgError)


class _ConfigError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()] if text else []


def _policy(text: str) -> float | None:
    """``auto`` -> None, otherwise a float."""
    if text == "auto":
        return None
    try:
        return float(text)
    except ValueError:
        raise _ConfigError(f"expected 'auto' or a number, got {text!r}") from None


def _add_data_options(p: argparse.ArgumentParser):
    p.add_argument("--input", required=True, help="CSV file with a header row")
    p.add_argument("--response", required=True)
    p.add_argument("--predictors", default=None, help="comma-separated column names")
    p.add_argument("--lags", default="", help="response lags to append, e.g. 1,2,3")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--intercept", action="store_true")
    p.add_argument("--bandwidth", default="auto", help="'auto' (GCV) or a value in (0, 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tvreg", description="Time-varying coefficient regression.")
    parser.add_argument("--kernel", default="epanechnikov")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None, help="output path (JSON report, or CSV for simulate)")
    parser.add_argument("--grid-size", type=int, default=None, help="uniform evaluation grid size")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="fit coefficient curves")
    _add_data_options(est)
    est.add_argument("--constant", default="", help="columns with constant coefficients, for intervals")
    est.add_argument("--level", type=float, default=0.95)

    test = sub.add_parser("test", help="test a hypothesis on the coefficient curves")
    _add_data_options(test)
    test.add_argument("--A", dest="A_spec", required=True, help="tested columns, by name or index")
    test.add_argument("--a", dest="a_spec", default="estimate", help="'estimate' or comma-separated values")
    test.add_argument("--weights", choices=("identity", "normalizer", "prediction"), default="identity")
    test.add_argument("--alpha", type=float, default=0.05)
    test.add_argument("--calibration", choices=("asymptotic", "simulated"), default="simulated")
    test.add_argument("--nsim", type=int, default=1000)

    sel = sub.add_parser("select", help="variable selection by VIC")
    _add_data_options(sel)
    sel.add_argument("--chi", default="auto")
    sel.add_argument("--search", choices=("exhaustive", "forward"), default="exhaustive")

    bw = sub.add_parser("bandwidth", help="GCV bandwidth selection")
    _add_data_options(bw)
    bw.add_argument("--refine", action="store_true")

    sim = sub.add_parser("simulate", help="simulate a data-generating process")
    sim.add_argument("--model", choices=("i", "ii", "tvar", "ararch"), required=True)
    sim.add_argument("--n", type=int, default=500)
    sim.add_argument("--ar", default="0.5:0.0", help="tvar coefficients a_k(t) = c0 + c1 t as c0:c1,...")
    sim.add_argument("--burn-in", type=int, default=200)

    rep = sub.add_parser("replicate", help="Monte Carlo replication of a simulation study")
    rep.add_argument("--table", choices=TABLES, required=True)
    rep.add_argument("--reps", type=int, default=200)
    rep.add_argument("--n", type=int, default=500)
    rep.add_argument("--jobs", type=int, default=1)
    rep.add_argument("--set", action="append", default=[], metavar="KEY=JSON", help="override a default")
    return parser


def _load(args):
    return ingest_csv(
        args.input,
        args.response,
        args.predictors.split(",") if args.predictors else None,
        _int_list(args.lags),
        args.standardize,
        args.intercept,
    )


def _grid(args, n):
    if args.grid_size is None:
        return EvaluationGrid.observation_times(n)
    if args.grid_size < 2:
        raise _ConfigError("--grid-size must be at least 2")
    return EvaluationGrid.uniform(args.grid_size)


def _bandwidth(args, data, kernel):
    b = _policy(args.bandwidth)
    return select_bandwidth(data, kernel) if b is None else b


def _columns(spec: str, names: Sequence[str]) -> list[int]:
    cols = []
    for token in (t.strip() for t in spec.split(",") if t.strip()):
        if token in names:
            cols.append(list(names).index(token))
        elif token.lstrip("-").isdigit():
            cols.append(int(token))
        else:
            raise _ConfigError(f"unknown column {token!r}; available: {list(names)}")
    if not cols:
        raise _ConfigError("empty column specification")
    return cols


def _emit(args, result: dict, curves=None):
    if args.out:
        emit_report(result, args.out, curves)
    else:
        print(json.dumps(to_jsonable(result), sort_keys=True, indent=2))


def _cmd_estimate(args, kernel):
    data = _load(args)
    b = _bandwidth(args, data, kernel)
    grid = _grid(args, data.n)
    fit = local_linear_fit(data, kernel, b, grid)
    result = {
        "command": "estimate",
        "config": {"input": args.input, "bandwidth": b, "kernel": kernel.name, "n": data.n},
        "columns": list(data.column_names),
        "rss": fit.rss,
        "hat_trace": fit.hat_trace,
        "singular_points": int(fit.singular_flags.sum()),
    }
    if args.constant:
        cols = _columns(args.constant, data.column_names)
        A = np.eye(data.p)[cols]
        cov = estimate_covariance(data, fit, kernel, grid=grid)
        ci = theorem1_ci(fit, A, cov, args.level)
        result["constant_coefficients"] = {
            "columns": cols,
            "estimate": ci.estimate,
            "lower": ci.lower,
            "upper": ci.upper,
            "std_error": ci.std_error,
            "level": ci.level,
        }
    _emit(args, result, {"curves": curve_table(fit, data.column_names)})


def _cmd_test(args, kernel):
    data = _load(args)
    b = _bandwidth(args, data, kernel)
    cols = _columns(args.A_spec, data.column_names)
    if args.a_spec == "estimate":
        a = "estimate"
    else:
        try:
            a = np.array([float(v) for v in args.a_spec.split(",")])
        except ValueError:
            raise _ConfigError(f"--a must be 'estimate' or numbers, got {args.a_spec!r}") from None
    if args.calibration == "simulated" and args.nsim < 200:
        raise _ConfigError("--nsim must be at least 200 with simulated calibration")
    hyp = Hypothesis(np.eye(data.p)[cols], a, args.weights)
    report = tv_test(
        data, hyp, kernel, b, args.alpha, args.calibration, args.nsim, args.seed,
        grid=_grid(args, data.n),
    )
    result = {
        "command": "test",
        "config": {
            "input": args.input, "columns": cols, "a": args.a_spec, "weights": args.weights,
            "alpha": args.alpha, "calibration": args.calibration, "nsim": args.nsim,
            "seed": args.seed, "kernel": kernel.name, "bandwidth": b,
        },
        "report": report.to_dict(),
    }
    _emit(args, result)


def _cmd_select(args, kernel):
    data = _load(args)
    chi = _policy(args.chi)
    b = _policy(args.bandwidth)
    if b is None:
        report = two_stage_bandwidth(data, kernel, chi, search=args.search)
    else:
        report = select_subset(data, kernel, b, chi, args.search)
    result = {
        "command": "select",
        "config": {"input": args.input, "chi": chi if chi is not None else default_chi(data.n),
                   "search": args.search, "kernel": kernel.name},
        "report": report.to_dict(),
    }
    _emit(args, result)


def _cmd_bandwidth(args, kernel):
    data = _load(args)
    grid, scores = gcv_curve(data, kernel)
    b = select_bandwidth(data, kernel, refine=args.refine)
    result = {
        "command": "bandwidth",
        "config": {"input": args.input, "kernel": kernel.name, "refine": args.refine},
        "bandwidth": b,
    }
    _emit(args, result, {"gcv": (["b", "gcv"], np.column_stack([grid, scores]))})


def _linear_coefficients(spec: str):
    funcs = []
    for token in spec.split(","):
        try:
            c0, c1 = (float(v) for v in token.split(":"))
        except ValueError:
            raise _ConfigError(f"bad --ar entry {token!r}; expected c0:c1") from None
        funcs.append(lambda t, c0=c0, c1=c1: c0 + c1 * np.asarray(t))
    return funcs


def _cmd_simulate(args, kernel):
    if args.model == "tvar":
        y = simulate_tvar(_linear_coefficients(args.ar), args.n, args.burn_in, args.seed)
        rows, header = y[:, None], ["y"]
    else:
        sim = {"i": simulate_model_i, "ii": simulate_model_ii, "ararch": simulate_ar_arch}[args.model]
        data = sim(args.n, args.seed).data
        rows = None
    if args.out is None:
        raise _ConfigError("simulate needs --out")
    if rows is None:
        write_regression_csv(args.out, data)
    else:
        write_table(args.out, header, rows)


def _cmd_replicate(args, kernel):
    overrides = {}
    for item in args.set:
        key, _, value = item.partition("=")
        try:
            overrides[key] = json.loads(value)
        except json.JSONDecodeError:
            raise _ConfigError(f"--set {item!r}: value must be JSON") from None
    summary = run_replication(
        args.table, args.reps, args.n, args.seed, overrides, kernel.name, args.jobs
    )
    _emit(args, summary.to_dict(), {"plot": (summary.plot_header, summary.plot_rows)})


_COMMANDS = {
    "estimate": _cmd_estimate,
    "test": _cmd_test,
    "select": _cmd_select,
    "bandwidth": _cmd_bandwidth,
    "simulate": _cmd_simulate,
    "replicate": _cmd_replicate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        kernel = get_kernel(args.kernel)
        if args.out and args.command != "simulate":
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        _COMMANDS[args.command](args, kernel)
    except (_ConfigError, *_CONFIG_ERRORS) as exc:
        print(f"tvreg: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERIC_ERRORS as exc:
        print(f"tvreg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
