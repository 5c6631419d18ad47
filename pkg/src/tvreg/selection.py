"""
Variable selection and bandwidth choice.

Subsets are scored by ``VIC(D) = log RSS(D) + chi_n |D|`` where ``RSS(D)``
is the residual sum of squares of the local linear fit on columns ``D``.
Bandwidths are chosen by generalized cross-validation with the squared
residual norm taken in the metric of a banded estimate of the error
covariance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded, eigvals_banded
from scipy.optimize import minimize_scalar

from tvreg.covariance import select_truncation_lag
from tvreg.exceptions import DataError, DomainError, FitError
from tvreg.kernels import Kernel
from tvreg.locfit import (
    RegressionData,
    _hat_diagonal,
    _singular,
    local_linear_fit,
    local_moments,
)

__all__ = [
    "SelectionReport",
    "BandedCovariance",
    "default_chi",
    "default_bandwidth_grid",
    "rss_subset",
    "vic",
    "select_subset",
    "banded_gamma",
    "gcv",
    "gcv_curve",
    "select_bandwidth",
    "two_stage_bandwidth",
]

MAX_EXHAUSTIVE = 20
_PD_FLOOR = 1e-8


def default_chi(n: int) -> float:
    """Default VIC penalty ``n^{-2/5}``."""
    return float(n) ** -0.4


def default_bandwidth_grid() -> np.ndarray:
    return np.round(np.arange(0.05, 0.9501, 0.01), 2)


@dataclass
class SelectionReport:
    candidates: list[tuple[int, ...]]
    rss: np.ndarray
    vic: np.ndarray
    chi_n: float
    chosen: tuple[int, ...]
    bandwidth_pilot: float
    bandwidth_final: float
    column_names: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        names = self.column_names
        return {
            "candidates": [list(c) for c in self.candidates],
            "rss": [float(v) for v in self.rss],
            "vic": [float(v) for v in self.vic],
            "chi_n": float(self.chi_n),
            "chosen": list(self.chosen),
            "chosen_names": [names[j] for j in self.chosen] if names else [],
            "bandwidth_pilot": float(self.bandwidth_pilot),
            "bandwidth_final": float(self.bandwidth_final),
        }


@dataclass(frozen=True)
class BandedCovariance:
    """
    Symmetric banded covariance estimate.

    ``acov[k]`` holds the entry on the k-th off-diagonal (k <= band), after
    the diagonal shift that makes the matrix positive definite.
    """

    acov: np.ndarray
    n: int
    band: int
    shift: float = 0.0
    _chol: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def Gamma_hat(self) -> np.ndarray:
        i = np.arange(self.n)
        lag = np.abs(i[:, None] - i[None, :])
        G = np.zeros((self.n, self.n))
        inside = lag <= self.band
        G[inside] = self.acov[lag[inside]]
        return G

    def upper_form(self) -> np.ndarray:
        """LAPACK upper banded storage, shape (band + 1, n)."""
        ab = np.zeros((self.band + 1, self.n))
        for k in range(self.band + 1):
            ab[self.band - k, k:] = self.acov[k]
        return ab

    def solve(self, r: np.ndarray) -> np.ndarray:
        """``Gamma_hat^{-1} r`` through a banded Cholesky factorization."""
        chol = self._chol
        if chol is None:
            chol = cholesky_banded(self.upper_form())
            object.__setattr__(self, "_chol", chol)
        return cho_solve_banded((chol, False), r)


def _column_list(subset: Sequence[int], p: int) -> list[int]:
    cols = sorted(set(int(j) for j in subset))
    if not cols:
        raise DomainError("subset must be nonempty")
    if cols[0] < 0 or cols[-1] >= p:
        raise DomainError(f"subset {tuple(cols)} has indices outside 0..{p - 1}")
    return cols


class _SubsetFitter:
    """Moments of the full design at the observation times, sliced per subset."""

    def __init__(self, data: RegressionData, kernel: Kernel, b: float):
        if not 0.0 < b < 1.0:
            raise DomainError(f"bandwidth must lie in (0, 1), got {b}")
        self.data = data
        self.kernel = kernel
        self.b = float(b)
        self.U, self.V = local_moments(data.X, data.y, kernel, b, data.times)

    def fitted(self, cols: list[int]) -> np.ndarray:
        p = self.data.p
        idx = np.array(cols + [p + j for j in cols])
        U = self.U[:, idx[:, None], idx[None, :]]
        V = self.V[:, idx]
        flags = _singular(U)
        if flags.any():
            raise FitError(
                f"moment matrix singular at {int(flags.sum())} observation times "
                f"for columns {tuple(cols)}"
            )
        sol = np.linalg.solve(U, V[:, :, None])[:, :, 0]
        return np.einsum("ij,ij->i", self.data.X[:, cols], sol[:, : len(cols)])

    def rss(self, cols: list[int]) -> float:
        r = self.data.y - self.fitted(cols)
        return float(r @ r)


def rss_subset(data: RegressionData, subset: Sequence[int], kernel: Kernel, b: float) -> float:
    """Residual sum of squares of the local linear fit on the given columns."""
    cols = _column_list(subset, data.p)
    return _SubsetFitter(data, kernel, b).rss(cols)


def _vic_value(rss: float, size: int, chi_n: float) -> float:
    if not rss > 0.0:
        raise FitError("residual sum of squares is zero; VIC is undefined")
    return float(np.log(rss) + chi_n * size)


def vic(
    data: RegressionData,
    subset: Sequence[int],
    kernel: Kernel,
    b: float,
    chi_n: float | None = None,
) -> float:
    """``log RSS(D) + chi_n |D|``; ``chi_n`` defaults to ``n^{-2/5}``."""
    chi_n = default_chi(data.n) if chi_n is None else float(chi_n)
    cols = _column_list(subset, data.p)
    return _vic_value(rss_subset(data, cols, kernel, b), len(cols), chi_n)


def _best(candidates, scores) -> int:
    order = sorted(range(len(candidates)), key=lambda k: (scores[k], len(candidates[k]), candidates[k]))
    return order[0]


def select_subset(
    data: RegressionData,
    kernel: Kernel,
    b: float,
    chi_n: float | None = None,
    search: str = "exhaustive",
    bandwidth_pilot: float | None = None,
) -> SelectionReport:
    """
    Minimize VIC over subsets of the design columns.

    ``exhaustive`` scores every nonempty subset (p <= 20). ``forward``
    starts from the best single column and adds one column at a time while
    VIC decreases. Ties go to the smaller subset, then the lexicographically
    smaller one.
    """
    chi_n = default_chi(data.n) if chi_n is None else float(chi_n)
    p = data.p
    fitter = _SubsetFitter(data, kernel, b)
    candidates: list[tuple[int, ...]] = []
    rss: list[float] = []
    scores: list[float] = []

    def score(cols: tuple[int, ...]) -> float:
        value = fitter.rss(list(cols))
        candidates.append(cols)
        rss.append(value)
        scores.append(_vic_value(value, len(cols), chi_n))
        return scores[-1]

    if search == "exhaustive":
        if p > MAX_EXHAUSTIVE:
            raise DomainError(f"exhaustive search needs p <= {MAX_EXHAUSTIVE}, got {p}")
        for size in range(1, p + 1):
            for cols in combinations(range(p), size):
                score(cols)
        chosen = candidates[_best(candidates, scores)]
    elif search == "forward":
        current: tuple[int, ...] = ()
        current_score = np.inf
        while len(current) < p:
            trial = [tuple(sorted(current + (j,))) for j in range(p) if j not in current]
            trial_scores = [score(c) for c in trial]
            k = _best(trial, trial_scores)
            if trial_scores[k] >= current_score:
                break
            current, current_score = trial[k], trial_scores[k]
        chosen = current
    else:
        raise DomainError(f"unknown search {search!r}")

    return SelectionReport(
        candidates=candidates,
        rss=np.array(rss),
        vic=np.array(scores),
        chi_n=chi_n,
        chosen=chosen,
        bandwidth_pilot=float(b if bandwidth_pilot is None else bandwidth_pilot),
        bandwidth_final=float(b),
        column_names=tuple(data.column_names),
    )


def banded_gamma(residuals: np.ndarray, band: int) -> BandedCovariance:
    """
    Banded Toeplitz estimate of the error covariance.

    Entries are the sample autocovariances up to lag ``band`` and zero
    beyond. If the result is not positive definite the diagonal is raised
    until its smallest eigenvalue equals ``1e-8`` times the lag-0 value,
    which keeps the band structure.
    """
    r = np.asarray(residuals, dtype=float).ravel()
    n = r.size
    band = int(band)
    if not 0 <= band < n:
        raise DomainError(f"band must lie in [0, n), got {band}")
    r = r - r.mean()
    acov = np.array([r[: n - k] @ r[k:] / n for k in range(band + 1)])
    if not acov[0] > 0.0:
        raise DataError("residuals are constant; covariance is degenerate")
    shift = 0.0
    if band > 0:
        probe = BandedCovariance(acov, n, band)
        lo = eigvals_banded(probe.upper_form(), select="i", select_range=(0, 0))[0]
        target = _PD_FLOOR * acov[0]
        if lo < target:
            shift = target - lo
            acov = acov.copy()
            acov[0] += shift
    return BandedCovariance(acov, n, band, shift)


def _gcv_from_fit(y, fitted, hat_trace, Gamma: BandedCovariance) -> float:
    n = y.size
    denom = (1.0 - hat_trace / n) ** 2
    if not hat_trace < n:
        raise FitError("hat trace reaches n; GCV denominator vanishes")
    r = fitted - y
    return float(r @ Gamma.solve(r) / n / denom)


def gcv(data: RegressionData, kernel: Kernel, b: float, Gamma_hat: BandedCovariance) -> float:
    """
    Dependence-corrected generalized cross-validation score.

    ``n^{-1} (Yhat - Y)' Gamma^{-1} (Yhat - Y) / (1 - tr H / n)^2``.
    """
    if Gamma_hat.n != data.n:
        raise DomainError("covariance size does not match the sample")
    fit = local_linear_fit(data, kernel, b)
    if fit.singular_flags.any():
        raise FitError(f"local fit singular at bandwidth {b}")
    return _gcv_from_fit(data.y, fit.fitted, fit.hat_trace, Gamma_hat)


def pilot_covariance(data: RegressionData, kernel: Kernel, b: float | None = None) -> BandedCovariance:
    """Banded covariance from residuals of a pilot fit (default ``b = n^{-1/5}``)."""
    b = data.n ** -0.2 if b is None else b
    resid = local_linear_fit(data, kernel, b).residuals
    cap = min(int(np.floor(np.sqrt(data.n))), data.n // 4)
    return banded_gamma(resid, select_truncation_lag(resid, cap=cap))


class _GcvEvaluator:
    """GCV on the observation times reusing the cached kernel matrices."""

    def __init__(self, data: RegressionData, kernel: Kernel, Gamma: BandedCovariance):
        self.data, self.kernel, self.Gamma = data, kernel, Gamma
        self.k0 = float(kernel(0.0))

    def __call__(self, b: float) -> float:
        data = self.data
        n, p = data.X.shape
        U, V = local_moments(data.X, data.y, self.kernel, b, data.times)
        flags = _singular(U)
        if flags.any():
            return np.inf
        sol = np.linalg.solve(U, V[:, :, None])[:, :p, 0]
        fitted = np.einsum("ij,ij->i", data.X, sol)
        trace = _hat_diagonal(data.X, U, flags, self.k0, b).sum()
        if not trace < n:
            return np.inf
        return _gcv_from_fit(data.y, fitted, trace, self.Gamma)


def gcv_curve(
    data: RegressionData,
    kernel: Kernel,
    b_grid: Sequence[float] | None = None,
    Gamma_hat: BandedCovariance | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """GCV over a bandwidth grid; singular bandwidths score ``inf``."""
    grid = default_bandwidth_grid() if b_grid is None else np.asarray(b_grid, dtype=float)
    if grid.size == 0:
        raise DomainError("bandwidth grid is empty")
    Gamma_hat = pilot_covariance(data, kernel) if Gamma_hat is None else Gamma_hat
    score = _GcvEvaluator(data, kernel, Gamma_hat)
    return grid, np.array([score(float(b)) for b in grid])


def select_bandwidth(
    data: RegressionData,
    kernel: Kernel,
    b_grid: Sequence[float] | None = None,
    Gamma_hat: BandedCovariance | None = None,
    refine: bool = False,
) -> float:
    """
    GCV-minimizing bandwidth over ``b_grid``.

    With ``refine`` the grid minimizer is polished by a bounded scalar
    search between its grid neighbours, so the result may leave the grid.
    """
    grid, scores = gcv_curve(data, kernel, b_grid, Gamma_hat)
    if not np.isfinite(scores).any():
        raise FitError("GCV undefined at every bandwidth in the grid")
    k = int(np.argmin(scores))
    best = float(grid[k])
    if refine and grid.size > 2:
        lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
        Gamma_hat = pilot_covariance(data, kernel) if Gamma_hat is None else Gamma_hat
        score = _GcvEvaluator(data, kernel, Gamma_hat)
        res = minimize_scalar(score, bounds=(lo, hi), method="bounded", options={"xatol": 1e-4})
        if res.success and res.fun < scores[k]:
            best = float(res.x)
    return best


def two_stage_bandwidth(
    data: RegressionData,
    kernel: Kernel,
    chi_n: float | None = None,
    b_grid: Sequence[float] | None = None,
    search: str = "exhaustive",
    refine: bool = False,
) -> SelectionReport:
    """
    Joint choice of subset and bandwidth.

    Stage one picks ``b`` by GCV with every column and runs VIC at that
    bandwidth. Stage two reruns GCV on the selected columns only.
    """
    chi_n = default_chi(data.n) if chi_n is None else float(chi_n)
    b_pilot = select_bandwidth(data, kernel, b_grid, refine=refine)
    report = select_subset(data, kernel, b_pilot, chi_n, search)
    sub = data.subset(report.chosen)
    if len(report.chosen) == data.p:
        b_final = b_pilot
    else:
        b_final = select_bandwidth(sub, kernel, b_grid, refine=refine)
    report.bandwidth_pilot = b_pilot
    report.bandwidth_final = b_final
    return report
