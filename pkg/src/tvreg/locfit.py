"""
Local linear estimation of time-varying regression coefficients.

The observation at row ``i`` (1-based) is located at time ``i / n``. At an
evaluation point ``t`` the estimator solves the 2p x 2p system built from
the kernel-weighted moments

    U_l(t) = (n b)^{-1} sum_i x_i x_i' u_i^l K(u_i),
    V_l(t) = (n b)^{-1} sum_i x_i y_i  u_i^l K(u_i),   u_i = (i/n - t) / b,

for l in {0, 1, 2}; the solution stacks the coefficient and ``b`` times
its derivative.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence, Union

import numpy as np
from scipy.special import ndtri

from tvreg.exceptions import CovarianceError, DataError, DomainError, FitError
from tvreg.kernels import Kernel, kernel_constants

__all__ = [
    "RegressionData",
    "EvaluationGrid",
    "LocalLinearFit",
    "Hypothesis",
    "ConfidenceIntervals",
    "local_moments",
    "local_linear_fit",
    "hat_matrix",
    "fit_from_moments",
    "local_linear_weights",
    "local_linear_weight_matrix",
    "local_linear_smooth",
    "integrate_coefficients",
    "integration_weights",
    "theorem1_ci",
    "COND_LIMIT",
    "MAX_SINGULAR_FRACTION",
]

COND_LIMIT = 1e12
MAX_SINGULAR_FRACTION = 0.2


@dataclass(frozen=True)
class RegressionData:
    """Observed sample: response ``y`` (n,) and design ``X`` (n, p)."""

    y: np.ndarray
    X: np.ndarray
    column_names: tuple[str, ...] = ()

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=float)
        X = np.ascontiguousarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if y.ndim != 1 or X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise DataError(f"shape mismatch: y {y.shape}, X {X.shape}")
        n, p = X.shape
        if n < 2 * p + 2:
            raise DataError(f"need n >= 2p + 2 observations, got n={n}, p={p}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise DataError("non-finite values in y or X")
        names = tuple(self.column_names) or tuple(f"x{j + 1}" for j in range(p))
        if len(names) != p:
            raise DataError(f"{len(names)} column names for {p} columns")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(1, self.n + 1) / self.n

    def subset(self, columns: Sequence[int]) -> "RegressionData":
        cols = list(columns)
        return RegressionData(
            self.y, self.X[:, cols], tuple(self.column_names[c] for c in cols)
        )


@dataclass(frozen=True)
class EvaluationGrid:
    """Strictly increasing evaluation points in [0, 1]."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise DomainError("grid needs at least two points")
        if np.any(np.diff(pts) <= 0) or pts[0] < 0.0 or pts[-1] > 1.0:
            raise DomainError("grid points must be strictly increasing within [0, 1]")
        object.__setattr__(self, "points", pts)

    @classmethod
    def observation_times(cls, n: int) -> "EvaluationGrid":
        """Default grid: the observation times i/n."""
        return cls(np.arange(1, n + 1) / n)

    @classmethod
    def uniform(cls, size: int) -> "EvaluationGrid":
        return cls(np.linspace(0.0, 1.0, size))

    @property
    def size(self) -> int:
        return self.points.size

    def matches_times(self, n: int) -> bool:
        return self.size == n and np.allclose(self.points, np.arange(1, n + 1) / n)


def integration_weights(points: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """
    Quadrature weights for integrals over [0, 1] from values on ``points``.

    Trapezoid rule between points, with the first and last values held
    flat out to 0 and 1, so the weights sum to one. Points where ``mask``
    is False get zero weight and the rule is rebuilt on the others.
    """
    points = np.asarray(points, dtype=float)
    keep = np.ones(points.size, bool) if mask is None else np.asarray(mask, bool)
    if not keep.any():
        raise FitError("no usable grid points to integrate over")
    pts = points[keep]
    sub = np.zeros(pts.size)
    dx = np.diff(pts)
    sub[:-1] += dx / 2.0
    sub[1:] += dx / 2.0
    sub[0] += pts[0]
    sub[-1] += 1.0 - pts[-1]
    w = np.zeros(points.size)
    w[keep] = sub
    return w / w.sum()


@dataclass
class LocalLinearFit:
    """Coefficient curves on a grid together with in-sample diagnostics."""

    grid: EvaluationGrid
    beta: np.ndarray
    beta_deriv: np.ndarray
    bandwidth: float
    residuals: np.ndarray
    hat_trace: float
    singular_flags: np.ndarray
    fitted: np.ndarray = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.residuals.size

    @property
    def p(self) -> int:
        return self.beta.shape[1]

    @property
    def rss(self) -> float:
        return float(self.residuals @ self.residuals)

    def beta_at(self, t) -> np.ndarray:
        """Linear interpolation of the coefficient curves at ``t``."""
        ok = ~self.singular_flags
        t = np.atleast_1d(np.asarray(t, dtype=float))
        pts = self.grid.points[ok]
        return np.column_stack(
            [np.interp(t, pts, self.beta[ok, j]) for j in range(self.p)]
        )


@dataclass(frozen=True)
class Hypothesis:
    """
    Linear restriction ``A beta(t) = a`` for all t.

    ``a`` is either a fixed vector or the string ``"estimate"``, in which
    case the integrated estimate of ``A beta`` is used.
    """

    A: np.ndarray
    a: Union[np.ndarray, str] = "estimate"
    weight_scheme: str = "identity"

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if not np.all(np.isfinite(A)):
            raise DomainError("hypothesis matrix has non-finite entries")
        if np.linalg.matrix_rank(A) != A.shape[0]:
            raise DomainError("hypothesis matrix must have full row rank")
        object.__setattr__(self, "A", A)
        if isinstance(self.a, str):
            if self.a != "estimate":
                raise DomainError(f"a must be a vector or 'estimate', got {self.a!r}")
        else:
            a = np.atleast_1d(np.asarray(self.a, dtype=float))
            if a.shape != (A.shape[0],):
                raise DomainError(f"a has shape {a.shape}, expected ({A.shape[0]},)")
            object.__setattr__(self, "a", a)
        if self.weight_scheme not in ("identity", "normalizer", "prediction"):
            raise DomainError(f"unknown weight scheme {self.weight_scheme!r}")

    @property
    def s(self) -> int:
        return self.A.shape[0]

    @property
    def estimate_a(self) -> bool:
        return isinstance(self.a, str)

    @classmethod
    def constancy(cls, p: int, columns: Sequence[int], weight_scheme: str = "identity"):
        """Test that the listed coefficients are time-invariant."""
        A = np.eye(p)[list(columns)]
        return cls(A, "estimate", weight_scheme)

    @classmethod
    def significance(cls, p: int, columns: Sequence[int], weight_scheme: str = "identity"):
        """Test that the listed coefficients are identically zero."""
        A = np.eye(p)[list(columns)]
        return cls(A, np.zeros(len(columns)), weight_scheme)


def _kernel_matrix(kernel: Kernel, b: float, points: np.ndarray, n: int):
    if points.size == n and np.array_equal(points, np.arange(1, n + 1) / n):
        return _kernel_matrix_on_times(kernel, float(b), n)
    times = np.arange(1, n + 1) / n
    u = (times[None, :] - points[:, None]) / b
    return u, kernel(u)


def _readonly(*arrays):
    for a in arrays:
        a.setflags(write=False)
    return arrays


@lru_cache(maxsize=32)
def _kernel_matrix_on_times(kernel: Kernel, b: float, n: int):
    times = np.arange(1, n + 1) / n
    u = (times[None, :] - times[:, None]) / b
    return _readonly(u, kernel(u))


def local_moments(
    X: np.ndarray, y: np.ndarray, kernel: Kernel, b: float, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """
    Kernel-weighted moment matrices at each evaluation point.

    Returns
    -------
    U : ndarray, shape (G, 2p, 2p)
    V : ndarray, shape (G, 2p)
    """
    n, p = X.shape
    u, k = _kernel_matrix(kernel, b, np.asarray(points, dtype=float), n)
    k = k / (n * b)
    ku = k * u
    kuu = ku * u
    xx = (X[:, :, None] * X[:, None, :]).reshape(n, p * p)
    xy = X * y[:, None]
    G = k.shape[0]
    U = np.empty((G, 2 * p, 2 * p))
    U[:, :p, :p] = (k @ xx).reshape(G, p, p)
    U1 = (ku @ xx).reshape(G, p, p)
    U[:, :p, p:] = U1
    U[:, p:, :p] = U1
    U[:, p:, p:] = (kuu @ xx).reshape(G, p, p)
    V = np.concatenate([k @ xy, ku @ xy], axis=1)
    return U, V


def _singular(U: np.ndarray) -> np.ndarray:
    eig = np.linalg.eigvalsh(U)
    lo, hi = eig[:, 0], eig[:, -1]
    return ~(lo > 0) | (hi > COND_LIMIT * np.maximum(lo, 0.0))


def _solve_moments(U: np.ndarray, V: np.ndarray):
    """Batched solve with singular points flagged and left as NaN."""
    flags = _singular(U)
    sol = np.full(V.shape, np.nan)
    ok = ~flags
    if ok.any():
        sol[ok] = np.linalg.solve(U[ok], V[ok][:, :, None])[:, :, 0]
    return sol, flags


def _hat_diagonal(X: np.ndarray, U_times: np.ndarray, flags: np.ndarray, k0: float, b: float):
    n, p = X.shape
    diag = np.zeros(n)
    ok = ~flags
    if ok.any():
        # H_ii = K(0)/(nb) * x_i' [U(i/n)^{-1}]_{11} x_i
        e = np.zeros((ok.sum(), 2 * p, p))
        e[:, :p, :] = np.eye(p)
        inv_top = np.linalg.solve(U_times[ok], e)[:, :p, :]
        diag[ok] = np.einsum("ij,ijk,ik->i", X[ok], inv_top, X[ok]) * k0 / (n * b)
    return diag


def fit_from_moments(
    data: RegressionData,
    kernel: Kernel,
    b: float,
    grid: EvaluationGrid,
    U: np.ndarray,
    V: np.ndarray,
    U_times: np.ndarray | None = None,
) -> LocalLinearFit:
    """Assemble a :class:`LocalLinearFit` from precomputed moments.

    ``U_times`` are the moments at the observation times, needed for the
    hat trace when the grid differs from them.
    """
    n, p = data.X.shape
    sol, flags = _solve_moments(U, V)
    if flags.all():
        raise FitError("moment matrix singular at every grid point")
    beta = sol[:, :p]
    deriv = sol[:, p:] / b
    on_times = grid.matches_times(n)
    if on_times and not flags.any():
        beta_t = beta
    else:
        ok = ~flags
        beta_t = np.column_stack(
            [np.interp(data.times, grid.points[ok], beta[ok, j]) for j in range(p)]
        )
    fitted = np.einsum("ij,ij->i", data.X, beta_t)
    if U_times is None:
        if on_times:
            U_times, flags_t = U, flags
        else:
            U_times, _ = local_moments(data.X, data.y, kernel, b, data.times)
            flags_t = _singular(U_times)
    else:
        flags_t = _singular(U_times)
    hat = _hat_diagonal(data.X, U_times, flags_t, float(kernel(0.0)), b)
    return LocalLinearFit(
        grid=grid,
        beta=beta,
        beta_deriv=deriv,
        bandwidth=float(b),
        residuals=data.y - fitted,
        hat_trace=float(hat.sum()),
        singular_flags=flags,
        fitted=fitted,
    )


def local_linear_fit(
    data: RegressionData,
    kernel: Kernel,
    b: float,
    grid: EvaluationGrid | None = None,
) -> LocalLinearFit:
    """
    Local linear estimate of the coefficient curve and its derivative.

    Parameters
    ----------
    data : RegressionData
    kernel : Kernel
    b : float
        Bandwidth in (0, 1).
    grid : EvaluationGrid, optional
        Evaluation points; defaults to the observation times i/n.

    Notes
    -----
    Grid points whose moment matrix has condition number above
    ``COND_LIMIT`` are flagged in ``singular_flags`` and carry NaN
    coefficients. No ridge term is added.
    """
    if not 0.0 < b < 1.0:
        raise DomainError(f"bandwidth must lie in (0, 1), got {b}")
    grid = grid or EvaluationGrid.observation_times(data.n)
    U, V = local_moments(data.X, data.y, kernel, b, grid.points)
    return fit_from_moments(data, kernel, b, grid, U, V)


def hat_matrix(data: RegressionData, kernel: Kernel, b: float) -> np.ndarray:
    """
    Smoother matrix ``H`` with fitted values ``H y`` at the observation times.

    Rows at singular points are zero.
    """
    X = data.X
    n, p = X.shape
    times = data.times
    U, _ = local_moments(X, data.y, kernel, b, times)
    flags = _singular(U)
    u, k = _kernel_matrix(kernel, b, times, n)
    k = k / (n * b)
    H = np.zeros((n, n))
    ok = ~flags
    if ok.any():
        rhs = np.zeros((ok.sum(), 2 * p, p))
        rhs[:, :p, :] = np.eye(p)
        # row i: x_i' [U^{-1}]_{top} applied to (n b)^{-1} K(u_ij) (x_j, u_ij x_j)
        top = np.linalg.solve(U[ok], rhs)
        c = np.einsum("ip,iqp->iq", X[ok], top)
        H[ok] = k[ok] * (c[:, :p] @ X.T + u[ok] * (c[:, p:] @ X.T))
    return H


def local_linear_weight_matrix(
    kernel: Kernel, b: float, points: np.ndarray, n: int
) -> np.ndarray:
    r"""
    Scalar local linear smoothing weights, one row per evaluation point.

    .. math::

        \omega_{i,b}(t) = K\{(i/n-t)/b\}
            \frac{P_{b,2}(t) - (t - i/n) P_{b,1}(t)}{P_{b,2}(t) P_{b,0}(t) - P_{b,1}(t)^2},
        \qquad P_{b,l}(t) = \sum_j (t - j/n)^l K\{(j/n - t)/b\}
    """
    if not 0.0 < b < 1.0:
        raise DomainError(f"bandwidth must lie in (0, 1), got {b}")
    points = np.atleast_1d(np.asarray(points, dtype=float))
    if points.size == n and np.array_equal(points, np.arange(1, n + 1) / n):
        return _weights_on_times(kernel, float(b), n)
    return _weight_matrix(kernel, b, points, n)


@lru_cache(maxsize=64)
def _weights_on_times(kernel: Kernel, b: float, n: int) -> np.ndarray:
    return _readonly(_weight_matrix(kernel, b, np.arange(1, n + 1) / n, n))[0]


def _weight_matrix(kernel: Kernel, b: float, points: np.ndarray, n: int) -> np.ndarray:
    times = np.arange(1, n + 1) / n
    d = points[:, None] - times[None, :]
    k = kernel(-d / b)
    P0 = k.sum(axis=1)
    P1 = (k * d).sum(axis=1)
    P2 = (k * d * d).sum(axis=1)
    denom = P2 * P0 - P1 * P1
    scale = np.maximum(P2 * P0, np.finfo(float).tiny)
    if np.any(denom <= 1e-12 * scale):
        raise FitError("degenerate local linear weights (too few points in window)")
    return k * (P2[:, None] - d * P1[:, None]) / denom[:, None]


def local_linear_weights(kernel: Kernel, b: float, t: float, n: int) -> np.ndarray:
    """Weights ``omega_{i,b}(t)``, i = 1..n, at a single point ``t``."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t}")
    return local_linear_weight_matrix(kernel, b, np.array([t]), n)[0]


def local_linear_smooth(
    Z: np.ndarray, kernel: Kernel, b: float, points: np.ndarray
) -> np.ndarray:
    """Smooth the rows of ``Z`` (n, ...) onto ``points``; trailing shape kept."""
    Z = np.asarray(Z, dtype=float)
    n = Z.shape[0]
    W = local_linear_weight_matrix(kernel, b, points, n)
    return (W @ Z.reshape(n, -1)).reshape((len(W),) + Z.shape[1:])


def integrate_coefficients(fit: LocalLinearFit, A: np.ndarray) -> np.ndarray:
    """Trapezoid estimate of the integral of ``A beta(t)`` over [0, 1]."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[1] != fit.p:
        raise DomainError(f"A has {A.shape[1]} columns, fit has p={fit.p}")
    flags = fit.singular_flags
    if flags.mean() > MAX_SINGULAR_FRACTION:
        raise FitError(f"{flags.mean():.0%} of grid points are singular")
    w = integration_weights(fit.grid.points, ~flags)
    beta = np.where(flags[:, None], 0.0, fit.beta)
    return A @ (w @ beta)


@dataclass(frozen=True)
class ConfidenceIntervals:
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    std_error: np.ndarray
    level: float
    bias: np.ndarray

    def covers(self, truth) -> np.ndarray:
        truth = np.asarray(truth, dtype=float)
        return (self.lower <= truth) & (truth <= self.upper)


def theorem1_ci(
    fit: LocalLinearFit,
    A: np.ndarray,
    covariance_field,
    level: float = 0.95,
    null: bool = True,
    kernel: Kernel | None = None,
) -> ConfidenceIntervals:
    """
    Normal confidence intervals for the integrated coefficient ``A beta``.

    The half-width is ``z * sqrt(diag(int A Xi(t) A' dt) / n)`` with
    ``Xi`` taken from ``covariance_field.Xi_hat`` on the fit grid. The
    smoothing bias ``b^2 kappa2 / 2 * int A beta''`` is zero under the
    null and otherwise returned as a diagnostic estimated from the
    numerically differentiated derivative curve; it never shifts the
    interval.
    """
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    est = integrate_coefficients(fit, A)
    Xi = np.asarray(covariance_field.Xi_hat)
    flags = fit.singular_flags | ~np.all(np.isfinite(Xi), axis=(1, 2))
    w = integration_weights(fit.grid.points, ~flags)
    Xi = np.where(flags[:, None, None], 0.0, Xi)
    cov = np.einsum("g,sp,gpq,rq->sr", w, A, Xi, A)
    cov = 0.5 * (cov + cov.T)
    if np.any(np.linalg.eigvalsh(cov) <= 0.0):
        raise CovarianceError("integrated covariance is not positive definite")
    se = np.sqrt(np.diag(cov) / fit.n)
    z = float(ndtri(0.5 + level / 2.0))
    if null:
        bias = np.zeros_like(est)
    else:
        if kernel is None:
            raise DomainError("the bias diagnostic needs the kernel")
        kappa2 = kernel_constants(kernel).kappa2
        second = np.gradient(fit.beta_deriv, fit.grid.points, axis=0)
        wb = integration_weights(fit.grid.points, ~fit.singular_flags)
        second = np.where(fit.singular_flags[:, None], 0.0, second)
        bias = fit.bandwidth**2 * kappa2 / 2.0 * (A @ (wb @ second))
    return ConfidenceIntervals(est, est - z * se, est + z * se, se, level, bias)
