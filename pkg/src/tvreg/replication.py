"""
Monte Carlo replication of the simulation studies.

Replicate ``k`` of table ``tid`` under master seed ``s`` simulates its data
with seed ``derive_seed(s, tid, k)``; calibrations use
``derive_seed(s, tid, "calibration", cell)``. Replicates are keyed by
index, so sequential and parallel runs give identical summaries.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from tvreg.covariance import estimate_covariance
from tvreg.exceptions import DomainError, ReplicationError, TvregError
from tvreg.kernels import get_kernel
from tvreg.locfit import Hypothesis, local_linear_fit, theorem1_ci
from tvreg.processes import (
    MODEL_I_TRUTH,
    MODEL_II_TRUTH,
    simulate_ar_arch,
    simulate_model_i,
    simulate_model_ii,
    simulate_partly_constant,
)
from tvreg.rng import derive_seed
from tvreg.selection import select_subset
from tvreg.testing import (
    delta_statistic,
    empirical_quantile,
    glrt_bootstrap,
    glrt_statistic,
    simulated_null_quantile,
)

__all__ = ["ReplicationSummary", "run_replication", "TABLES", "DEFAULTS"]

TABLES = ("table1", "table2", "glrt_qq", "coverage")

DEFAULTS: dict[str, dict] = {
    "table1": {"models": ("i", "ii"), "bandwidths": (0.2, 0.9), "chi": None, "search": "exhaustive"},
    "table2": {
        "model": "i",
        "bandwidths": (0.3,),
        "weights": ("identity",),
        "nsim": 2000,
        "alphas": (0.1, 0.05),
    },
    "glrt_qq": {"bandwidth": None, "nsim": 1000, "alphas": (0.1, 0.05, 0.01)},
    "coverage": {"bandwidth": None, "level": 0.95, "theta": 1.0},
}

_SIMULATORS = {"i": (simulate_model_i, MODEL_I_TRUTH), "ii": (simulate_model_ii, MODEL_II_TRUTH)}
# column of x1 inside the true subset of each model
_TESTED_COLUMN = {"i": 1, "ii": 0}


@dataclass
class ReplicationSummary:
    """Per-cell percentages with Monte Carlo standard errors."""

    table_id: str
    reps: int
    n: int
    seed: int
    config: dict
    cells: list[dict]
    runtime: float
    plot_header: list[str] = field(default_factory=list)
    plot_rows: np.ndarray = field(default_factory=lambda: np.empty((0, 0)), repr=False)

    def to_dict(self, include_runtime: bool = True) -> dict:
        out = {
            "table_id": self.table_id,
            "reps": self.reps,
            "n": self.n,
            "seed": self.seed,
            "config": self.config,
            "cells": self.cells,
        }
        if include_runtime:
            out["runtime_seconds"] = self.runtime
        return out

    def cell(self, **keys) -> dict:
        for c in self.cells:
            if all(c.get(k) == v for k, v in keys.items()):
                return c
        raise KeyError(keys)


def _percent_cell(hits: np.ndarray, **labels) -> dict:
    hits = np.asarray(hits, dtype=float)
    p = float(hits.mean())
    se = float(np.sqrt(p * (1.0 - p) / hits.size))
    return dict(labels, percent=100.0 * p, mc_se=100.0 * se)


def _classify(chosen, truth) -> int:
    chosen, truth = set(chosen), set(truth)
    if not truth <= chosen:
        return 0
    return 1 if chosen == truth else 2


def _rep_table1(idx, seed, cfg, kernel, n, shared):
    rep_seed = derive_seed(seed, "table1", idx)
    out = []
    for model in cfg["models"]:
        sim, truth = _SIMULATORS[model]
        data = sim(n, rep_seed).data
        for b in cfg["bandwidths"]:
            rep = select_subset(data, kernel, b, cfg["chi"], cfg["search"])
            out.append(_classify(rep.chosen, truth))
    return out


def _table2_sample(model, n, rep_seed):
    sim, truth = _SIMULATORS[model]
    return sim(n, rep_seed).data.subset(truth)


def _rep_table2(idx, seed, cfg, kernel, n, shared):
    data = _table2_sample(cfg["model"], n, derive_seed(seed, "table2", idx))
    col = _TESTED_COLUMN[cfg["model"]]
    out = []
    for b in cfg["bandwidths"]:
        for w in cfg["weights"]:
            h = Hypothesis.constancy(data.p, [col], w)
            out.append(delta_statistic(data, h, kernel, b).Delta)
    return out


def _rep_glrt(idx, seed, cfg, kernel, n, shared):
    rep_seed = derive_seed(seed, "glrt_qq", idx)
    data = simulate_ar_arch(n, rep_seed).data
    b = shared["b"]
    delta = delta_statistic(data, Hypothesis.constancy(1, [0]), kernel, b).Delta
    fit = local_linear_fit(data, kernel, b)
    stat = glrt_statistic(data, fit)
    boot = glrt_bootstrap(data, kernel, b, cfg["nsim"], rep_seed, cfg["alphas"])
    pval = (1 + np.count_nonzero(boot.samples >= stat)) / (boot.B + 1)
    return [delta, stat, pval] + [stat <= boot.quantiles[a] for a in cfg["alphas"]]


def _rep_coverage(idx, seed, cfg, kernel, n, shared):
    sample = simulate_partly_constant(n, derive_seed(seed, "coverage", idx), cfg["theta"])
    fit = local_linear_fit(sample.data, kernel, shared["b"])
    cov = estimate_covariance(sample.data, fit, kernel)
    ci = theorem1_ci(fit, np.array([[1.0, 0.0]]), cov, cfg["level"])
    return [ci.estimate[0], ci.std_error[0], bool(ci.covers([cfg["theta"]])[0])]


_WORKERS = {
    "table1": _rep_table1,
    "table2": _rep_table2,
    "glrt_qq": _rep_glrt,
    "coverage": _rep_coverage,
}


def _run_one(table_id, idx, seed, cfg, kernel_name, n, shared):
    try:
        return _WORKERS[table_id](idx, seed, cfg, get_kernel(kernel_name), n, shared)
    except (TvregError, np.linalg.LinAlgError) as exc:
        raise ReplicationError(f"{table_id} replicate {idx} failed: {exc}") from exc


def _config(table_id: str, overrides: Mapping | None) -> dict:
    cfg = dict(DEFAULTS[table_id])
    for key, value in (overrides or {}).items():
        if key not in cfg:
            raise DomainError(f"unknown override {key!r} for {table_id}")
        cfg[key] = value
    for key in ("models", "bandwidths", "weights", "alphas"):
        if key in cfg:
            cfg[key] = tuple(cfg[key])
    return cfg


def _qq_rows(observed: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Sorted observations against reference quantiles at (k - 1/2)/m."""
    obs = np.sort(observed)
    probs = (np.arange(1, obs.size + 1) - 0.5) / obs.size
    ref = np.array([empirical_quantile(reference, q) for q in probs])
    return np.column_stack([probs, obs, ref])


def run_replication(
    table_id: str,
    reps: int,
    n: int = 500,
    seed: int = 0,
    overrides: Mapping | None = None,
    kernel: str = "epanechnikov",
    n_jobs: int = 1,
) -> ReplicationSummary:
    """
    Run ``reps`` replicates of a simulation study.

    Parameters
    ----------
    table_id : {"table1", "table2", "glrt_qq", "coverage"}
        ``table1``: subset selection by VIC on models (i) and (ii).
        ``table2``: size of the constancy test for the x1 coefficient with
        simulated critical values. ``glrt_qq``: GLRT with conditional
        bootstrap against the studentized test on the AR-ARCH process.
        ``coverage``: normal intervals for the integrated constant
        coefficient.
    reps, n, seed : int
    overrides : mapping, optional
        Replaces entries of ``DEFAULTS[table_id]``.
    kernel : str
    n_jobs : int
        Worker processes; results do not depend on it.

    Raises
    ------
    ReplicationError
        When any replicate fails, naming its index.
    """
    if table_id not in TABLES:
        raise DomainError(f"unknown table {table_id!r}; expected one of {TABLES}")
    if reps < 1:
        raise DomainError("reps must be positive")
    cfg = _config(table_id, overrides)
    kern = get_kernel(kernel)
    start = time.perf_counter()

    shared: dict = {}
    calibrations = {}
    if table_id == "table2":
        p = len(_SIMULATORS[cfg["model"]][1])
        col = _TESTED_COLUMN[cfg["model"]]
        for b in cfg["bandwidths"]:
            for w in cfg["weights"]:
                cal_seed = derive_seed(seed, table_id, "calibration", b, w)
                calibrations[(b, w)] = simulated_null_quantile(
                    n, p, Hypothesis.constancy(p, [col], w), kern, b,
                    cfg["alphas"], cfg["nsim"], cal_seed, n_jobs=n_jobs,
                )
    elif table_id == "glrt_qq":
        shared["b"] = cfg["bandwidth"] or n ** -0.2
        cal_seed = derive_seed(seed, table_id, "calibration")
        calibrations["delta"] = simulated_null_quantile(
            n, 1, Hypothesis.constancy(1, [0]), kern, shared["b"],
            cfg["alphas"], cfg["nsim"], cal_seed, n_jobs=n_jobs,
        )
    elif table_id == "coverage":
        shared["b"] = cfg["bandwidth"] or n ** (-1.0 / 3.0)

    args = [(table_id, k, seed, cfg, kernel, n, shared) for k in range(reps)]
    if n_jobs == 1:
        results = [_run_one(*a) for a in args]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_one, *zip(*args)))
    res = np.array(results, dtype=float)

    cells: list[dict] = []
    header: list[str] = []
    plot = np.empty((0, 0))
    if table_id == "table1":
        col = 0
        for model in cfg["models"]:
            for b in cfg["bandwidths"]:
                codes = res[:, col]
                for code, name in enumerate(("under", "correct", "over")):
                    cells.append(_percent_cell(codes == code, model=model, bandwidth=b, outcome=name))
                col += 1
        header = ["rep"] + [f"{m}_b{b}" for m in cfg["models"] for b in cfg["bandwidths"]]
        plot = np.column_stack([np.arange(reps), res])
    elif table_id == "table2":
        col = 0
        for b in cfg["bandwidths"]:
            for w in cfg["weights"]:
                cal = calibrations[(b, w)]
                for a in cfg["alphas"]:
                    cells.append(
                        _percent_cell(
                            res[:, col] <= cal.quantiles[a],
                            model=cfg["model"], bandwidth=b, weights=w, nominal=1.0 - a,
                            critical_value=cal.quantiles[a],
                        )
                    )
                col += 1
        b0, w0 = cfg["bandwidths"][0], cfg["weights"][0]
        header = ["prob", "delta", "delta_null"]
        plot = _qq_rows(res[:, 0], calibrations[(b0, w0)].samples)
    elif table_id == "glrt_qq":
        cal = calibrations["delta"]
        for j, a in enumerate(cfg["alphas"]):
            cells.append(_percent_cell(res[:, 0] <= cal.quantiles[a], method="delta", nominal=1.0 - a))
            cells.append(_percent_cell(res[:, 3 + j] > 0.5, method="glrt", nominal=1.0 - a))
        qq = _qq_rows(res[:, 0], cal.samples)
        uniform = (np.arange(1, reps + 1) - 0.5) / reps
        header = ["prob", "delta", "delta_null", "glrt_pvalue", "uniform"]
        plot = np.column_stack([qq, np.sort(res[:, 2]), uniform])
    else:
        cells.append(_percent_cell(res[:, 2] > 0.5, level=cfg["level"], bandwidth=shared["b"]))
        cells[-1]["estimate_sd"] = float(np.std(res[:, 0], ddof=1))
        cells[-1]["mean_std_error"] = float(np.mean(res[:, 1]))
        header = ["rep", "estimate", "std_error", "covered"]
        plot = np.column_stack([np.arange(reps), res])

    echo = dict(cfg)
    echo.update(kernel=kernel, **{k: v for k, v in shared.items()})
    echo["calibration_seeds"] = {str(k): c.seed for k, c in calibrations.items()}
    return ReplicationSummary(
        table_id=table_id,
        reps=reps,
        n=n,
        seed=seed,
        config=echo,
        cells=cells,
        runtime=time.perf_counter() - start,
        plot_header=header,
        plot_rows=plot,
    )
