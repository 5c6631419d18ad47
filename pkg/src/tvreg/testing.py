"""
L2 tests of linear restrictions on the coefficient curve.

The statistic is the weighted integrated squared deviation ``T_n`` of
``A beta~(t)`` from ``a``; its studentized form ``Delta_n`` is
asymptotically standard normal and pivotal. Critical values come either
from the normal limit or from replicating the whole pipeline on pure
Gaussian noise of the same shape. The GLRT with conditional bootstrap is
included as a baseline.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from tvreg.covariance import CovarianceField, estimate_covariance, xi_functionals
from tvreg.exceptions import CalibrationError, CovarianceError, DomainError, FitError, TvregError
from tvreg.kernels import Kernel, KernelConstants, kernel_constants
from tvreg.locfit import (
    EvaluationGrid,
    Hypothesis,
    LocalLinearFit,
    RegressionData,
    hat_matrix,
    integrate_coefficients,
    integration_weights,
    local_linear_fit,
)
from tvreg.rng import make_rng

__all__ = [
    "TestReport",
    "DeltaResult",
    "Calibration",
    "normal_cdf",
    "normal_quantile",
    "weight_field",
    "compute_Tn",
    "studentize",
    "asymptotic_decision",
    "delta_statistic",
    "simulated_null_quantile",
    "simulated_p_value",
    "tv_test",
    "predicted_power",
    "glrt_statistic",
    "glrt_bootstrap",
    "empirical_quantile",
]


def normal_cdf(x):
    return ndtr(x)


def normal_quantile(p):
    return ndtri(p)


def empirical_quantile(samples: np.ndarray, prob: float) -> float:
    """Order statistic ``ceil(B * prob)`` of the sample (inverse empirical CDF)."""
    z = np.sort(np.asarray(samples, dtype=float))
    k = int(np.ceil(prob * z.size)) - 1
    return float(z[min(max(k, 0), z.size - 1)])


@dataclass
class TestReport:
    """Outcome of one test; ``reject`` iff ``Delta > critical_value``."""

    __test__ = False

    Tn: float
    centering: float
    scale: float
    Delta: float
    alpha: float
    critical_value: float
    critical_source: str
    p_value: float
    reject: bool
    n_sim: int = 0
    seed: int | None = None
    a_used: list = field(default_factory=list)
    bandwidth: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "Tn": self.Tn,
            "centering": self.centering,
            "scale": self.scale,
            "Delta": self.Delta,
            "alpha": self.alpha,
            "critical_value": self.critical_value,
            "critical_source": self.critical_source,
            "p_value": self.p_value,
            "reject": bool(self.reject),
            "n_sim": self.n_sim,
            "seed": self.seed,
            "a_used": [float(v) for v in self.a_used],
            "bandwidth": self.bandwidth,
        }


def weight_field(
    scheme: str,
    A: np.ndarray,
    Xi_field: np.ndarray | None = None,
    M_field: np.ndarray | None = None,
    grid: EvaluationGrid | None = None,
) -> np.ndarray:
    """
    Weight matrices on the grid.

    ``identity``: I_s; ``normalizer``: (A Xi A')^{-1};
    ``prediction``: A M A'. Points where the needed field is not finite
    get NaN.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    s = A.shape[0]
    if scheme == "identity":
        G = grid.size if grid is not None else len(Xi_field if Xi_field is not None else M_field)
        return np.broadcast_to(np.eye(s), (G, s, s)).copy()
    if scheme == "normalizer":
        inner = np.einsum("sp,gpq,rq->gsr", A, Xi_field, A)
        out = np.full(inner.shape, np.nan)
        ok = np.all(np.isfinite(inner), axis=(1, 2))
        try:
            out[ok] = np.linalg.inv(inner[ok])
        except np.linalg.LinAlgError as exc:
            raise CovarianceError("A Xi A' is singular; normalizer weights undefined") from exc
        return 0.5 * (out + np.swapaxes(out, 1, 2))
    if scheme == "prediction":
        return np.einsum("sp,gpq,rq->gsr", A, M_field, A)
    raise DomainError(f"unknown weight scheme {scheme!r}")


def compute_Tn(
    fit: LocalLinearFit,
    A: np.ndarray,
    a: np.ndarray,
    W_field: np.ndarray,
    grid: EvaluationGrid | None = None,
    mask: np.ndarray | None = None,
) -> float:
    """Trapezoid integral of ``(A beta(t) - a)' W(t) (A beta(t) - a)``."""
    grid = grid or fit.grid
    A = np.atleast_2d(np.asarray(A, dtype=float))
    a = np.atleast_1d(np.asarray(a, dtype=float))
    usable = ~fit.singular_flags & np.all(np.isfinite(W_field), axis=(1, 2))
    if mask is not None:
        usable &= mask
    dev = fit.beta[usable] @ A.T - a
    quad = np.einsum("gs,gsr,gr->g", dev, W_field[usable], dev)
    return float(integration_weights(grid.points[usable]) @ quad)


def studentize(
    Tn: float, n: int, b: float, constants: KernelConstants, Xi1: float, Xi2: float
) -> float:
    """``n b^{1/2} (T_n - (nb)^{-1} K*(0) Xi1) / (4 K*_2 Xi2)^{1/2}``."""
    if not Xi2 > 0.0:
        raise DomainError(f"Xi2 must be positive, got {Xi2}")
    centering = constants.KstarAt0 * Xi1 / (n * b)
    scale = np.sqrt(4.0 * constants.Kstar2 * Xi2)
    return float(n * np.sqrt(b) * (Tn - centering) / scale)


def asymptotic_decision(Delta: float, alpha: float) -> tuple[float, bool, float]:
    """Normal critical value, strict rejection and upper-tail p-value."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    crit = float(normal_quantile(1.0 - alpha))
    return crit, bool(Delta > crit), float(1.0 - normal_cdf(Delta))


@dataclass
class DeltaResult:
    """Everything computed on the way to ``Delta_n`` for one sample."""

    Tn: float
    centering: float
    scale: float
    Delta: float
    a_used: np.ndarray
    Xi1: float
    Xi2: float
    fit: LocalLinearFit = field(repr=False)
    covariance: CovarianceField = field(repr=False)
    W: np.ndarray = field(repr=False)


def delta_statistic(
    data: RegressionData,
    hypothesis: Hypothesis,
    kernel: Kernel,
    b: float,
    grid: EvaluationGrid | None = None,
    **cov_options,
) -> DeltaResult:
    """
    Fit, estimate the covariance field and studentize ``T_n``.

    ``cov_options`` are forwarded to :func:`estimate_covariance`.
    """
    A = hypothesis.A
    if A.shape[1] != data.p:
        raise DomainError(f"hypothesis has {A.shape[1]} columns, data has p={data.p}")
    grid = grid or EvaluationGrid.observation_times(data.n)
    fit = local_linear_fit(data, kernel, b, grid)
    a = integrate_coefficients(fit, A) if hypothesis.estimate_a else hypothesis.a
    cov = estimate_covariance(data, fit, kernel, grid=grid, **cov_options)
    W = weight_field(hypothesis.weight_scheme, A, cov.Xi_hat, cov.M_hat, grid)
    mask = ~(fit.singular_flags | cov.flags) & np.all(np.isfinite(W), axis=(1, 2))
    if mask.mean() < 0.8:
        raise FitError("more than 20% of grid points unusable")
    Tn = compute_Tn(fit, A, a, W, grid, mask)
    Xi1 = xi_functionals(cov.Xi_hat, A, W, 1, grid.points, mask)
    Xi2 = xi_functionals(cov.Xi_hat, A, W, 2, grid.points, mask)
    const = kernel_constants(kernel)
    centering = const.KstarAt0 * Xi1 / (data.n * b)
    scale = float(np.sqrt(4.0 * const.Kstar2 * Xi2))
    Delta = studentize(Tn, data.n, b, const, Xi1, Xi2)
    return DeltaResult(Tn, centering, scale, Delta, np.asarray(a), Xi1, Xi2, fit, cov, W)


@dataclass
class Calibration:
    """Simulated null distribution of ``Delta_n``."""

    samples: np.ndarray
    alphas: tuple
    quantiles: dict
    seed: int
    failures: int = 0

    @property
    def B(self) -> int:
        return self.samples.size

    def critical_value(self, alpha: float) -> float:
        return empirical_quantile(self.samples, 1.0 - alpha)


def _null_hypothesis(hypothesis: Hypothesis) -> Hypothesis:
    # Under pure noise beta = 0, so a fixed restriction becomes a = 0.
    if hypothesis.estimate_a:
        return hypothesis
    return Hypothesis(hypothesis.A, np.zeros(hypothesis.s), hypothesis.weight_scheme)


def _null_replicate(n, p, hypothesis, kernel, b, seed, index, cov_options):
    rng = make_rng(seed, "calibration", index)
    y = rng.standard_normal(n)
    X = rng.standard_normal((n, p))
    return delta_statistic(RegressionData(y, X), hypothesis, kernel, b, **cov_options).Delta


def simulated_null_quantile(
    n: int,
    p: int,
    hypothesis: Hypothesis,
    kernel: Kernel,
    b: float,
    alphas: Sequence[float] = (0.1, 0.05, 0.01),
    B: int = 1000,
    seed: int = 0,
    n_jobs: int = 1,
    **cov_options,
) -> Calibration:
    """
    Empirical null quantiles of ``Delta_n`` from ``B`` pure-noise samples.

    Each replicate draws i.i.d. N(0, 1) responses and an i.i.d. N(0, I_p)
    design of the same size, then runs the same fit, covariance and
    studentization steps as the real data. Replicate ``k`` uses the
    stream ``make_rng(seed, "calibration", k)``.

    Raises
    ------
    CalibrationError
        If more than 1% of replicates fail numerically.
    """
    if B < 200:
        raise DomainError(f"need at least 200 replicates, got {B}")
    null = _null_hypothesis(hypothesis)
    if n_jobs == 1:
        values = [
            _safe(_null_replicate, n, p, null, kernel, b, seed, k, cov_options)
            for k in range(B)
        ]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            values = list(
                pool.map(
                    _safe,
                    *zip(*[(_null_replicate, n, p, null, kernel, b, seed, k, cov_options) for k in range(B)]),
                )
            )
    values = np.asarray(values, dtype=float)
    failures = int(np.isnan(values).sum())
    if failures > 0.01 * B:
        raise CalibrationError(f"{failures} of {B} calibration replicates failed")
    samples = values[~np.isnan(values)]
    quantiles = {float(a): empirical_quantile(samples, 1.0 - a) for a in alphas}
    return Calibration(samples, tuple(float(a) for a in alphas), quantiles, seed, failures)


def _safe(func, *args):
    try:
        return func(*args)
    except (TvregError, np.linalg.LinAlgError):
        return float("nan")


def simulated_p_value(Delta: float, samples: np.ndarray) -> float:
    """``(1 + #{Delta° >= Delta}) / (B + 1)``."""
    samples = np.asarray(samples)
    return float((1 + np.count_nonzero(samples >= Delta)) / (samples.size + 1))


def tv_test(
    data: RegressionData,
    hypothesis: Hypothesis,
    kernel: Kernel,
    b: float,
    alpha: float = 0.05,
    calibration: str | Calibration = "asymptotic",
    nsim: int = 1000,
    seed: int = 0,
    grid: EvaluationGrid | None = None,
    **cov_options,
) -> TestReport:
    """
    Run the test of ``hypothesis`` on ``data``.

    ``calibration`` is ``"asymptotic"``, ``"simulated"`` (runs
    :func:`simulated_null_quantile` with ``nsim`` replicates) or a
    precomputed :class:`Calibration` for the same n, p, b and hypothesis.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    res = delta_statistic(data, hypothesis, kernel, b, grid, **cov_options)
    if isinstance(calibration, str) and calibration == "simulated":
        calibration = simulated_null_quantile(
            data.n, data.p, hypothesis, kernel, b, (alpha,), nsim, seed, **cov_options
        )
    if isinstance(calibration, Calibration):
        crit = calibration.critical_value(alpha)
        pval = simulated_p_value(res.Delta, calibration.samples)
        source, nsim_used, seed_used = "simulated", calibration.B, calibration.seed
    elif calibration == "asymptotic":
        crit, _, pval = asymptotic_decision(res.Delta, alpha)
        source, nsim_used, seed_used = "asymptotic", 0, None
    else:
        raise DomainError(f"unknown calibration {calibration!r}")
    return TestReport(
        Tn=res.Tn,
        centering=res.centering,
        scale=res.scale,
        Delta=res.Delta,
        alpha=alpha,
        critical_value=crit,
        critical_source=source,
        p_value=pval,
        reject=bool(res.Delta > crit),
        n_sim=nsim_used,
        seed=seed_used,
        a_used=list(np.atleast_1d(res.a_used)),
        bandwidth=float(b),
    )


def predicted_power(
    f_grid: np.ndarray,
    W_field: np.ndarray,
    d_n: float,
    n: int,
    b: float,
    constants: KernelConstants,
    Xi2: float,
    alpha: float,
    points: np.ndarray,
) -> float:
    """
    Asymptotic power against ``A beta(t) = a + d_n f(t)``:
    ``Phi(q_alpha + n b^{1/2} d_n^2 int f'Wf / (4 K*_2 Xi2)^{1/2})``.
    """
    f_grid = np.asarray(f_grid, dtype=float)
    if f_grid.ndim == 1:
        f_grid = f_grid[:, None]
    shift_scale = n * np.sqrt(b) * d_n**2
    quad = np.einsum("gs,gsr,gr->g", f_grid, W_field, f_grid)
    integral = float(integration_weights(points) @ quad)
    z = normal_quantile(alpha) + shift_scale * integral / np.sqrt(4.0 * constants.Kstar2 * Xi2)
    return float(normal_cdf(z))


def glrt_statistic(data: RegressionData, fit: LocalLinearFit) -> float:
    """``n/2 log(RSS_0 / RSS_1)``: least squares versus local linear residuals."""
    beta_ls, *_ = np.linalg.lstsq(data.X, data.y, rcond=None)
    r0 = data.y - data.X @ beta_ls
    rss0 = float(r0 @ r0)
    rss1 = fit.rss
    if rss1 <= 0.0:
        raise FitError("local linear residual sum of squares is zero")
    return data.n / 2.0 * np.log(rss0 / rss1)


def glrt_bootstrap(
    data: RegressionData,
    kernel: Kernel,
    b: float,
    B: int = 1000,
    seed: int = 0,
    alphas: Sequence[float] = (0.1, 0.05, 0.01),
) -> Calibration:
    """
    Conditional bootstrap null distribution of the GLRT statistic.

    Bootstrap responses are ``x_i' beta_ls + e_i`` with ``e_i`` i.i.d.
    ``N(0, RSS_1 / n)``; replicate ``k`` uses
    ``make_rng(seed, "glrt", k)``.
    """
    if B < 200:
        raise DomainError(f"need at least 200 replicates, got {B}")
    X, y, n = data.X, data.y, data.n
    H = hat_matrix(data, kernel, b)
    beta_ls, *_ = np.linalg.lstsq(X, y, rcond=None)
    rss1 = float(np.sum((y - H @ y) ** 2))
    if rss1 <= 0.0:
        raise FitError("local linear residual sum of squares is zero")
    sigma = np.sqrt(rss1 / n)
    E = np.column_stack([make_rng(seed, "glrt", k).standard_normal(n) for k in range(B)])
    Y = (X @ beta_ls)[:, None] + sigma * E
    coef, *_ = np.linalg.lstsq(X, Y, rcond=None)
    R0 = Y - X @ coef
    R1 = Y - H @ Y
    stats = n / 2.0 * np.log(np.sum(R0 * R0, axis=0) / np.sum(R1 * R1, axis=0))
    quantiles = {float(a): empirical_quantile(stats, 1.0 - a) for a in alphas}
    return Calibration(stats, tuple(float(a) for a in alphas), quantiles, seed)
