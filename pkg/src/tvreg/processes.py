"""
Data-generating processes for the simulation studies.

Models (i) and (ii) build predictors from a moving average whose
coefficients are scaled Legendre polynomials in time; the TVAR and
AR-ARCH simulators are recursive. Every simulator draws from the
counter-based streams of :mod:`tvreg.rng`, so identical arguments give
bitwise-identical output.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from tvreg.exceptions import DomainError, StabilityError
from tvreg.locfit import RegressionData
from tvreg.rng import make_rng, rademacher

__all__ = [
    "ProcessSpec",
    "SimulatedSample",
    "legendre",
    "simulate",
    "simulate_model_i",
    "simulate_model_ii",
    "simulate_tvar",
    "frozen_tvar",
    "companion_radius",
    "simulate_ar_arch",
    "simulate_partly_constant",
    "MA_TRUNCATION",
    "MODEL_I_TRUTH",
    "MODEL_II_TRUTH",
]

MA_TRUNCATION = 60
MIXING = 0.2 ** np.abs(np.subtract.outer(np.arange(5), np.arange(5)))

MODEL_I_COLUMNS = ("intercept", "x1", "x2", "x3", "x4", "x5")
MODEL_I_TRUTH = (0, 1, 2)
MODEL_II_COLUMNS = ("x1", "x2", "x3", "x4", "x5", "ylag1", "ylag2", "ylag3")
MODEL_II_TRUTH = (0, 1, 5)


def legendre(j: int, x):
    """Legendre polynomial of degree ``j`` (0..10) by the three-term recurrence."""
    if not 0 <= j <= 10:
        raise DomainError(f"degree must be in 0..10, got {j}")
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0):
        raise DomainError("Legendre argument must lie in [-1, 1]")
    prev, cur = np.ones_like(x), x
    if j == 0:
        return prev if prev.ndim else float(prev)
    for k in range(1, j):
        prev, cur = cur, ((2 * k + 1) * x * cur - k * prev) / (k + 1)
    return cur if cur.ndim else float(cur)


@dataclass(frozen=True)
class ProcessSpec:
    kind: str
    n: int
    seed: int = 0
    burn_in: int = 0
    coefficient_functions: tuple = ()
    innovation_law: str = "gaussian"

    def __post_init__(self):
        if self.kind not in ("model_i", "model_ii", "tvar", "ar_arch", "custom"):
            raise DomainError(f"unknown process kind {self.kind!r}")
        if self.n < 50:
            raise DomainError(f"n must be at least 50, got {self.n}")
        if self.burn_in < 0:
            raise DomainError("burn_in must be nonnegative")
        if self.innovation_law not in ("gaussian", "rademacher"):
            raise DomainError(f"unknown innovation law {self.innovation_law!r}")


@dataclass
class SimulatedSample:
    """Regression sample with the indices of the truly relevant columns."""

    data: RegressionData
    truth: tuple
    kind: str
    seed: int
    series: np.ndarray | None = field(default=None, repr=False)


def _legendre_ma(eps: np.ndarray, coef: np.ndarray, n: int, J: int) -> np.ndarray:
    """
    Sum over j = 0..J of coef[i]^j * eps[i - j] for i = 1..n.

    ``eps`` rows 0..n-1 hold times 1..n and rows n..n+J-1 hold times
    0, -1, ..., 1-J (pre-sample, drawn after the sample from the same
    stream).
    """
    ordered = np.concatenate([eps[n:][::-1], eps[:n]], axis=0)  # times 1-J .. n
    windows = sliding_window_view(ordered, J + 1, axis=0)  # (n, k, J+1), oldest first
    powers = coef[:, :, None] ** np.arange(J, -1, -1)[None, None, :]
    return np.einsum("ikj,ikj->ik", windows, powers)


def _model_design(n: int, seed: int, J: int, label: str):
    rng = make_rng(seed, label)
    sample = rademacher(rng, (n, 6))
    presample = rademacher(rng, (J, 6))
    eps = np.vstack([sample, presample])
    xi = eps[:, :5] @ MIXING.T
    t = np.arange(1, n + 1) / n
    u = 2.0 * t - 1.0
    coef = np.column_stack([legendre(k, u) / 4.0 for k in range(1, 7)])
    x = _legendre_ma(xi, coef[:, :5], n, J)
    e = _legendre_ma(eps[:, 5:], coef[:, 5:], n, J)[:, 0]
    return t, x, e, eps


def simulate_model_i(n: int, seed: int = 0, truncation: int = MA_TRUNCATION) -> SimulatedSample:
    """
    Linear model with heteroscedastic, serially dependent errors:

    ``y_i = (2t-1)^2 + 2 x_{i1} + 2 log(t+1) x_{i2} + 0.5 (x_{i2}^2 + x_{i3}^2)^{1/2} e_i``

    with ``t = i/n``. Columns: intercept and five predictors; the first
    three are relevant.
    """
    if n < 100:
        raise DomainError(f"model (i) needs n >= 100, got {n}")
    t, x, e, eps = _model_design(n, seed, truncation, "model_i")
    y = (
        (2.0 * t - 1.0) ** 2
        + 2.0 * x[:, 0]
        + 2.0 * np.log(t + 1.0) * x[:, 1]
        + 0.5 * np.sqrt(x[:, 1] ** 2 + x[:, 2] ** 2) * e
    )
    X = np.column_stack([np.ones(n), x])
    return SimulatedSample(RegressionData(y, X, MODEL_I_COLUMNS), MODEL_I_TRUTH, "model_i", seed, eps)


def simulate_model_ii(n: int, seed: int = 0, truncation: int = MA_TRUNCATION) -> SimulatedSample:
    """
    Linear model with a time-varying autoregressive effect:

    ``y_i = 0.4 sin(2 pi t) y_{i-1} + 0.3 x_{i1} + 0.4 (2t-1)^3 x_{i2} + exp(0.5t - 2) eps_{i6}``

    started from zeros. The candidate design holds the five predictors and
    three lags of ``y``; the first three rows (incomplete lags) are
    dropped, leaving ``n - 3`` rows.
    """
    if n < 100:
        raise DomainError(f"model (ii) needs n >= 100, got {n}")
    t, x, _, eps = _model_design(n, seed, truncation, "model_ii")
    noise = np.exp(0.5 * t - 2.0) * eps[:n, 5]
    drift = 0.3 * x[:, 0] + 0.4 * (2.0 * t - 1.0) ** 3 * x[:, 1] + noise
    ar = 0.4 * np.sin(2.0 * np.pi * t)
    y = np.zeros(n + 3)  # y[k + 3] holds time k
    for i in range(n):
        y[i + 3] = ar[i] * y[i + 2] + drift[i]
    lags = np.column_stack([y[3 - k : n + 3 - k] for k in (1, 2, 3)])
    resp = y[3:]
    X = np.column_stack([x, lags])[3:]
    data = RegressionData(resp[3:], X, MODEL_II_COLUMNS)
    return SimulatedSample(data, MODEL_II_TRUTH, "model_ii", seed, resp)


def companion_radius(coeffs: Sequence[Callable], t) -> np.ndarray:
    """Spectral radius of the companion matrix of the AR coefficients at ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    p = len(coeffs)
    C = np.zeros((t.size, p, p))
    for k, a in enumerate(coeffs):
        C[:, 0, k] = np.broadcast_to(a(t), t.shape)
    if p > 1:
        C[:, np.arange(1, p), np.arange(p - 1)] = 1.0
    return np.max(np.abs(np.linalg.eigvals(C)), axis=1)


def _check_stable(coeffs, grid_size: int = 1001):
    radius = companion_radius(coeffs, np.linspace(0.0, 1.0, grid_size)).max()
    if radius >= 1.0 - 1e-6:
        raise StabilityError(f"companion spectral radius {radius:.6f} is not below 1")


def _innovations(rng, size: int, law: str) -> np.ndarray:
    if law == "gaussian":
        return rng.standard_normal(size)
    if law == "rademacher":
        return rademacher(rng, size)
    raise DomainError(f"unknown innovation law {law!r}")


def simulate_tvar(
    coeffs: Sequence[Callable],
    n: int,
    burn_in: int = 0,
    seed: int = 0,
    noise_scale: Callable | float = 1.0,
    law: str = "gaussian",
    innovations: np.ndarray | None = None,
    start: Sequence[float] | None = None,
) -> np.ndarray:
    """
    Time-varying autoregression ``y_i = sum_k a_k(i/n) y_{i-k} + e_i``.

    ``e_i = noise_scale(i/n) * eps_i``. The recursion runs ``burn_in``
    extra steps before time 1 with the coefficients and noise scale frozen
    at ``t = 0``; those values are discarded. ``innovations`` (length
    ``burn_in + n``) override the random draws.

    Returns
    -------
    ndarray, shape (n,)
    """
    coeffs = list(coeffs)
    p = len(coeffs)
    _check_stable(coeffs)
    total = burn_in + n
    if innovations is None:
        eps = _innovations(make_rng(seed, "tvar"), total, law)
    else:
        eps = np.asarray(innovations, dtype=float)
        if eps.shape != (total,):
            raise DomainError(f"expected {total} innovations, got {eps.shape}")
    t = np.clip((np.arange(total) - burn_in + 1) / n, 0.0, 1.0)
    a = np.column_stack([np.broadcast_to(f(t), t.shape) for f in coeffs])
    scale = noise_scale(t) if callable(noise_scale) else np.full(total, float(noise_scale))
    e = scale * eps
    y = np.zeros(total + p)
    if start is not None:
        y[:p] = np.asarray(start, dtype=float)[::-1]
    for i in range(total):
        y[p + i] = a[i] @ y[p + i - 1 :: -1][:p] + e[i]
    return y[p + burn_in :]


def frozen_tvar(
    coeffs: Sequence[Callable],
    innovations: np.ndarray,
    n: int,
    burn_in: int = 0,
    noise_scale: Callable | float = 1.0,
    truncation: int = 400,
) -> np.ndarray:
    """
    Stationary approximation evaluated along the path.

    For each time ``i`` the coefficients and noise scale are frozen at
    ``t = i/n`` and the causal MA representation is applied to the same
    innovations used by :func:`simulate_tvar` (truncated at
    ``truncation`` lags or the start of the innovation record).
    """
    coeffs = list(coeffs)
    p = len(coeffs)
    eps = np.asarray(innovations, dtype=float)
    total = burn_in + n
    t = np.arange(1, n + 1) / n
    a = np.column_stack([np.broadcast_to(f(t), t.shape) for f in coeffs])
    J = min(truncation, total - 1)
    psi = np.zeros((n, J + 1))
    psi[:, 0] = 1.0
    for j in range(1, J + 1):
        for k in range(1, min(p, j) + 1):
            psi[:, j] += a[:, k - 1] * psi[:, j - k]
    scale = noise_scale(t) if callable(noise_scale) else np.full(n, float(noise_scale))
    padded = np.concatenate([np.zeros(J), eps])
    pos = burn_in + np.arange(n) + J  # index of eps for time i in padded
    lagged = padded[pos[:, None] - np.arange(J + 1)[None, :]]
    return scale * np.einsum("ij,ij->i", psi, lagged)


def simulate_ar_arch(
    n: int,
    seed: int = 0,
    burn_in: int = 200,
    innovations: np.ndarray | None = None,
) -> SimulatedSample:
    """
    AR(1) with ARCH(1) errors and a logistic time-varying scale:

    ``y_i = 0.5 y_{i-1} + 0.25 [1 + (1 + exp(3 - 6i/n))^{-1}] e_i``,
    ``e_i = (1 + 0.25 e_{i-1}^2)^{1/2} eps_i``.

    The regression sample has response ``y_i`` and single predictor
    ``y_{i-1}`` for i = 1..n; burn-in steps use the scale at ``t = 0``.
    """
    if n < 100:
        raise DomainError(f"AR-ARCH needs n >= 100, got {n}")
    total = burn_in + n + 1
    if innovations is None:
        eps = make_rng(seed, "ar_arch").standard_normal(total)
    else:
        eps = np.asarray(innovations, dtype=float)
        if eps.shape != (total,):
            raise DomainError(f"expected {total} innovations, got {eps.shape}")
    t = np.clip((np.arange(total) - burn_in) / n, 0.0, 1.0)
    scale = 0.25 * (1.0 + 1.0 / (1.0 + np.exp(3.0 - 6.0 * t)))
    y = np.zeros(total)
    e_prev = 0.0
    y_prev = 0.0
    for i in range(total):
        e_prev = np.sqrt(1.0 + 0.25 * e_prev * e_prev) * eps[i]
        y_prev = 0.5 * y_prev + scale[i] * e_prev
        y[i] = y_prev
    series = y[burn_in:]  # times 0..n
    data = RegressionData(series[1:], series[:-1, None], ("ylag1",))
    return SimulatedSample(data, (0,), "ar_arch", seed, series)


def simulate_partly_constant(n: int, seed: int = 0, theta: float = 1.0, burn_in: int = 100) -> SimulatedSample:
    """
    Regression with one constant and one time-varying coefficient:

    ``y_i = theta + sin(2 pi t) x_i + e_i`` with ``x`` a Gaussian AR(1)
    (coefficient 0.5) and ``e_i = eps_i + 0.5 eps_{i-1}``. Column 0 is the
    intercept, whose coefficient ``theta`` is the constant sub-vector.
    """
    if n < 50:
        raise DomainError(f"n must be at least 50, got {n}")
    z = make_rng(seed, "partly_constant").standard_normal((2, burn_in + n + 1))
    x = np.zeros(burn_in + n + 1)
    for i in range(1, x.size):
        x[i] = 0.5 * x[i - 1] + z[0, i]
    e = z[1, 1:] + 0.5 * z[1, :-1]
    x, e = x[-n:], e[-n:]
    t = np.arange(1, n + 1) / n
    y = theta + np.sin(2.0 * np.pi * t) * x + e
    data = RegressionData(y, np.column_stack([np.ones(n), x]), ("intercept", "x1"))
    return SimulatedSample(data, (0, 1), "partly_constant", seed)


def simulate(spec: ProcessSpec):
    """Dispatch on ``spec.kind``; TVAR returns the bare series."""
    if spec.kind == "model_i":
        return simulate_model_i(spec.n, spec.seed)
    if spec.kind == "model_ii":
        return simulate_model_ii(spec.n, spec.seed)
    if spec.kind == "ar_arch":
        return simulate_ar_arch(spec.n, spec.seed, burn_in=spec.burn_in or 200)
    if spec.kind == "tvar":
        return simulate_tvar(
            spec.coefficient_functions, spec.n, spec.burn_in, spec.seed, law=spec.innovation_law
        )
    raise DomainError("custom processes are built by the caller")
