"""
Time-varying second-moment estimators for the local linear fit.

``M(t)`` is the local second moment of the design, ``Lambda(t)`` the
local long-run covariance of ``L_i = x_i e_i`` and ``Xi(t)`` the sandwich
``M^{-1} Lambda M^{-1}``. All three are obtained by local linear
smoothing of per-observation matrices.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tvreg.exceptions import CovarianceError, DomainError
from tvreg.kernels import Kernel
from tvreg.locfit import (
    COND_LIMIT,
    EvaluationGrid,
    LocalLinearFit,
    RegressionData,
    integration_weights,
    local_linear_weight_matrix,
)

__all__ = [
    "CovarianceField",
    "estimate_M",
    "lambda_series",
    "estimate_Lambda",
    "select_truncation_lag",
    "sandwich_Xi",
    "xi_functionals",
    "smoother_gcv",
    "select_smoother_bandwidth",
    "estimate_covariance",
    "psd_project",
    "DEFAULT_COV_BANDWIDTHS",
]

DEFAULT_COV_BANDWIDTHS = np.round(np.arange(0.05, 0.951, 0.05), 2)
_PSD_FLOOR = 1e-10


def _symmetrize(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def psd_project(S: np.ndarray, floor: float = _PSD_FLOOR) -> np.ndarray:
    """Floor eigenvalues of each symmetric matrix at ``floor`` times its largest."""
    S = _symmetrize(np.asarray(S, dtype=float))
    vals, vecs = np.linalg.eigh(S)
    top = np.maximum(vals[..., -1:], np.finfo(float).tiny)
    vals = np.maximum(vals, floor * top)
    return _symmetrize((vecs * vals[..., None, :]) @ np.swapaxes(vecs, -1, -2))


@dataclass
class CovarianceField:
    """Grid-indexed M, Lambda and sandwich Xi with the bandwidths used."""

    grid: EvaluationGrid
    M_hat: np.ndarray
    Lambda_hat: np.ndarray
    Xi_hat: np.ndarray
    bandwidths: dict
    truncation_lag: int
    flags: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.flags is None:
            self.flags = ~np.all(np.isfinite(self.Xi_hat), axis=(1, 2))


def estimate_M(
    data: RegressionData, kernel: Kernel, varpi: float, grid: EvaluationGrid
) -> np.ndarray:
    """Local linear smooth of ``x_i x_i'`` with bandwidth ``varpi``."""
    if not 0.0 < varpi < 1.0:
        raise DomainError(f"varpi must lie in (0, 1), got {varpi}")
    X = data.X
    n, p = X.shape
    W = local_linear_weight_matrix(kernel, varpi, grid.points, n)
    xx = (X[:, :, None] * X[:, None, :]).reshape(n, p * p)
    return _symmetrize((W @ xx).reshape(-1, p, p))


def lambda_series(L: np.ndarray, lag: int) -> np.ndarray:
    """
    Per-observation long-run covariance contributions with window ``lag``.

    Interior rows use the two-sided window ``L_i sum_{|j-i|<=lag} L_j'``;
    rows within ``lag`` of either end use ``L_i L_i'`` plus twice the
    one-sided sum pointing into the sample. The result is symmetrized.
    """
    L = np.asarray(L, dtype=float)
    if L.ndim == 1:
        L = L[:, None]
    n, p = L.shape
    lag = int(lag)
    if lag < 0:
        raise DomainError(f"lag must be nonnegative, got {lag}")
    if lag >= n:
        raise DomainError(f"window lag {lag} not shorter than the series ({n})")
    c = np.vstack([np.zeros((1, p)), np.cumsum(L, axis=0)])
    idx = np.arange(n)
    hi = np.minimum(idx + lag, n - 1)
    lo = np.maximum(idx - lag, 0)
    forward = c[hi + 1] - c[idx + 1]
    backward = c[idx] - c[lo]
    i = idx + 1
    left = i <= lag
    right = (i >= n - lag) & ~left
    other = forward + backward
    other = np.where(left[:, None], 2.0 * forward, other)
    other = np.where(right[:, None], 2.0 * backward, other)
    lam = L[:, :, None] * (L + other)[:, None, :]
    return _symmetrize(lam)


def smoother_gcv(Z: np.ndarray, kernel: Kernel, b: float) -> float:
    """Plain GCV score of the local linear smoother applied to the rows of Z."""
    Z = np.asarray(Z, dtype=float)
    n = Z.shape[0]
    flat = Z.reshape(n, -1)
    W = local_linear_weight_matrix(kernel, b, np.arange(1, n + 1) / n, n)
    resid = flat - W @ flat
    denom = (1.0 - np.trace(W) / n) ** 2
    if denom <= 0.0:
        return np.inf
    return float(np.sum(resid * resid) / n / denom)


def select_smoother_bandwidth(
    Z: np.ndarray, kernel: Kernel, bandwidths=DEFAULT_COV_BANDWIDTHS
) -> float:
    """Bandwidth minimizing :func:`smoother_gcv`; ties go to the smaller one."""
    scores = []
    for b in bandwidths:
        try:
            scores.append(smoother_gcv(Z, kernel, float(b)))
        except ArithmeticError:
            scores.append(np.inf)
    scores = np.asarray(scores)
    if not np.any(np.isfinite(scores)):
        raise CovarianceError("GCV undefined for every candidate bandwidth")
    return float(np.asarray(bandwidths)[int(np.argmin(scores))])


def estimate_Lambda(
    L: np.ndarray,
    kernel: Kernel,
    tau: float,
    rho: float | None = None,
    grid: EvaluationGrid | None = None,
    lag: int | None = None,
) -> np.ndarray:
    """
    Local long-run covariance of the rows of ``L``.

    The truncation window is ``n * tau * rho`` observations; pass ``lag``
    to give that window directly. The smoothed matrices are projected onto
    the positive semidefinite cone by eigenvalue flooring.
    """
    L = np.asarray(L, dtype=float)
    if L.ndim == 1:
        L = L[:, None]
    n = L.shape[0]
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (0, 1), got {tau}")
    if lag is None:
        if rho is None:
            raise DomainError("give either rho or lag")
        window = n * tau * rho
        if window < 1.0:
            raise DomainError(f"n * tau * rho = {window:.3g} < 1")
        lag = int(round(window))
    grid = grid or EvaluationGrid.observation_times(n)
    lam = lambda_series(L, lag)
    p = L.shape[1]
    W = local_linear_weight_matrix(kernel, tau, grid.points, n)
    smooth = (W @ lam.reshape(n, p * p)).reshape(-1, p, p)
    return psd_project(smooth)


def _batch_means_sd(z: np.ndarray, batch: int) -> float:
    nb = z.size // batch
    if nb < 2:
        return float(np.std(z, ddof=1)) if z.size > 1 else 0.0
    means = z[: nb * batch].reshape(nb, batch).mean(axis=1)
    return float(np.sqrt(batch * np.var(means, ddof=1)))


def select_truncation_lag(L: np.ndarray, cap: int | None = None) -> int:
    """
    Data-driven truncation lag for the long-run covariance.

    Lags are scanned upward from 0; lag ``k`` is significant when
    ``|n^{-1/2} sum_i L_i' L_{i+k}|`` exceeds 1.96 times the long-run
    standard deviation of the product series (non-overlapping batch means,
    batch length ``floor(n^{1/3})``, demeaned). The scan stops at the
    first insignificant lag and returns the last significant one.
    """
    L = np.asarray(L, dtype=float)
    if L.ndim == 1:
        L = L[:, None]
    n = L.shape[0]
    cap = int(np.floor(np.sqrt(n))) if cap is None else int(cap)
    if cap > n // 4:
        raise DomainError(f"lag cap {cap} exceeds n/4 = {n // 4}")
    batch = max(1, int(np.floor(n ** (1.0 / 3.0))))
    chosen = 0
    for k in range(cap + 1):
        z = np.einsum("ij,ij->i", L[: n - k], L[k:])
        stat = abs(z.sum()) / np.sqrt(n)
        sigma = _batch_means_sd(z - z.mean(), batch)
        if stat > 1.96 * sigma:
            chosen = k
        else:
            break
    return chosen


def sandwich_Xi(M_hat: np.ndarray, Lambda_hat: np.ndarray) -> np.ndarray:
    """
    Per-point ``M^{-1} Lambda M^{-1}``.

    Points where ``M`` has condition number above ``COND_LIMIT`` (or is not
    positive definite) are returned as NaN.
    """
    M_hat = np.asarray(M_hat, dtype=float)
    Lambda_hat = np.asarray(Lambda_hat, dtype=float)
    eig = np.linalg.eigvalsh(M_hat)
    bad = ~(eig[:, 0] > 0) | (eig[:, -1] > COND_LIMIT * np.maximum(eig[:, 0], 0.0))
    out = np.full(M_hat.shape, np.nan)
    ok = ~bad
    if ok.any():
        Minv = np.linalg.inv(M_hat[ok])
        out[ok] = _symmetrize(Minv @ Lambda_hat[ok] @ Minv)
    return out


def _sqrtm_pd(W: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(_symmetrize(W))
    if np.any(vals <= 0.0):
        raise CovarianceError("weight matrix is not positive definite")
    return (vecs * np.sqrt(vals)[..., None, :]) @ np.swapaxes(vecs, -1, -2)


def xi_functionals(
    Xi_field: np.ndarray,
    A: np.ndarray,
    W_field: np.ndarray,
    l: int,
    points: np.ndarray,
    mask: np.ndarray | None = None,
) -> float:
    """
    Trace of the integral of ``(W^{1/2} A Xi A' W^{1/2})^l`` over [0, 1].

    ``mask`` selects usable grid points (default: those where ``Xi`` is
    finite); the trapezoid weights are renormalized over them.
    """
    if l not in (1, 2):
        raise DomainError(f"l must be 1 or 2, got {l}")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Xi_field = np.asarray(Xi_field, dtype=float)
    W_field = np.asarray(W_field, dtype=float)
    if mask is None:
        mask = np.all(np.isfinite(Xi_field), axis=(1, 2))
    root = _sqrtm_pd(W_field[mask])
    inner = np.einsum("sp,gpq,rq->gsr", A, Xi_field[mask], A)
    S = root @ inner @ root
    if l == 2:
        S = S @ S
    w = integration_weights(np.asarray(points)[mask])
    return float(w @ np.trace(S, axis1=1, axis2=2))


def estimate_covariance(
    data: RegressionData,
    fit: LocalLinearFit,
    kernel: Kernel,
    grid: EvaluationGrid | None = None,
    varpi: float | None = None,
    tau: float | None = None,
    lag: int | None = None,
    lag_cap: int | None = None,
    bandwidths=DEFAULT_COV_BANDWIDTHS,
) -> CovarianceField:
    """
    Estimate ``M``, ``Lambda`` and ``Xi`` on ``grid`` from a fitted model.

    Unset tuning parameters are chosen from the data:

    * ``varpi``: GCV on ``x_i x_i'`` floored at ``n^{-1/5}``;
    * ``lag``: :func:`select_truncation_lag` on ``x_i * residual_i``;
    * ``tau``: GCV on the symmetrized window series.
    """
    n = data.n
    grid = grid or fit.grid
    X = data.X
    if varpi is None:
        xx = X[:, :, None] * X[:, None, :]
        varpi = max(select_smoother_bandwidth(xx, kernel, bandwidths), n ** (-0.2))
    M_hat = estimate_M(data, kernel, varpi, grid)
    L = X * fit.residuals[:, None]
    if lag is None:
        lag = select_truncation_lag(L, lag_cap)
    if tau is None:
        tau = select_smoother_bandwidth(lambda_series(L, lag), kernel, bandwidths)
    Lambda_hat = estimate_Lambda(L, kernel, tau, grid=grid, lag=lag)
    Xi_hat = sandwich_Xi(M_hat, Lambda_hat)
    return CovarianceField(
        grid=grid,
        M_hat=M_hat,
        Lambda_hat=Lambda_hat,
        Xi_hat=Xi_hat,
        bandwidths={"varpi": float(varpi), "tau": float(tau), "rho": lag / (n * tau)},
        truncation_lag=int(lag),
    )
