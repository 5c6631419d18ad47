import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tvreg.covariance import (
    estimate_Lambda,
    estimate_M,
    estimate_covariance,
    lambda_series,
    psd_project,
    sandwich_Xi,
    select_truncation_lag,
    xi_functionals,
)
from tvreg.exceptions import CovarianceError, DomainError
from tvreg.kernels import epanechnikov
from tvreg.locfit import EvaluationGrid, RegressionData, local_linear_fit
from tvreg.rng import make_rng

SIGMA5 = 0.2 ** np.abs(np.subtract.outer(np.arange(5), np.arange(5)))


def lambda_oracle(L, m):
    """Explicit loops over the left-edge, right-edge and interior windows (1-based i)."""
    n, p = L.shape
    out = np.zeros((n, p, p))
    for i in range(1, n + 1):
        Li = L[i - 1]
        if i <= m:
            S = np.outer(Li, Li) + 2 * sum((np.outer(Li, L[i - 1 + j]) for j in range(1, m + 1)), np.zeros((p, p)))
        elif i >= n - m:
            S = np.outer(Li, Li) + 2 * sum((np.outer(Li, L[i - 1 - j]) for j in range(1, m + 1)), np.zeros((p, p)))
        else:
            S = sum(np.outer(Li, L[i - 1 + j]) for j in range(-m, m + 1))
        out[i - 1] = (S + S.T) / 2
    return out


def ma1(n, seed, theta=0.5):
    e = make_rng(seed, "ma1").standard_normal(n + 1)
    return e[1:] + theta * e[:-1]


def test_M_intercept_only():
    n = 200
    data = RegressionData(np.zeros(n), np.ones((n, 1)))
    M = estimate_M(data, epanechnikov, 0.3, EvaluationGrid.observation_times(n))
    assert np.max(np.abs(M - 1.0)) < 1e-10


def test_M_iid_design_close_to_covariance():
    n = 2000
    X = make_rng(4, "iid").standard_normal((n, 5)) @ np.linalg.cholesky(SIGMA5).T
    data = RegressionData(np.zeros(n), X)
    grid = EvaluationGrid.uniform(101)
    M = estimate_M(data, epanechnikov, n ** -0.2, grid)
    inner = (grid.points >= 0.2) & (grid.points <= 0.8)
    assert np.max(np.linalg.norm(M[inner] - SIGMA5, ord=2, axis=(1, 2))) < 0.35
    assert round(500 ** -0.2, 4) == 0.2885


@pytest.mark.parametrize("m", [0, 1, 3])
def test_lambda_series_matches_window_oracle(m):
    L = make_rng(m, "lam").standard_normal((23, 2))
    assert np.allclose(lambda_series(L, m), lambda_oracle(L, m), atol=1e-12)


def test_lambda_series_window_too_long():
    with pytest.raises(DomainError):
        lambda_series(np.ones((5, 1)), 5)


def test_estimate_lambda_white_noise():
    hits = 0
    grid = EvaluationGrid.uniform(41)
    for seed in range(20):
        L = make_rng(seed, "white").standard_normal(2000)
        lam = estimate_Lambda(L, epanechnikov, 0.3, grid=grid, lag=select_truncation_lag(L))
        inner = (grid.points >= 0.3) & (grid.points <= 0.7)
        hits += np.all(np.abs(lam[inner, 0, 0] - 1.0) < 0.15)
    assert hits >= 18


def test_estimate_lambda_ma1_long_run_variance():
    grid = EvaluationGrid.uniform(41)
    vals = []
    for seed in range(20):
        L = ma1(2000, seed)
        lam = estimate_Lambda(L, epanechnikov, 0.3, grid=grid, lag=2)
        vals.append(lam[20, 0, 0])
    assert np.mean(vals) == pytest.approx(2.25, abs=0.15)


def test_estimate_lambda_tracks_modulation():
    n = 2000
    grid = EvaluationGrid.uniform(21)
    inner = (grid.points >= 0.3) & (grid.points <= 0.7)
    ok = 0
    for seed in range(20):
        L = (1 + np.arange(1, n + 1) / n) * make_rng(seed, "mod").standard_normal(n)
        lam = estimate_Lambda(L, epanechnikov, 0.5, grid=grid, lag=0)[inner, 0, 0]
        ok += np.all(np.diff(lam) > 0)
    assert ok >= 18


def test_estimate_lambda_rho_window():
    L = ma1(500, 1)
    a = estimate_Lambda(L, epanechnikov, 0.2, rho=0.02)
    b = estimate_Lambda(L, epanechnikov, 0.2, lag=2)
    assert np.allclose(a, b)
    with pytest.raises(DomainError):
        estimate_Lambda(L, epanechnikov, 0.2, rho=0.001)


def test_truncation_lag_white_noise_and_ma2():
    zero = sum(select_truncation_lag(make_rng(s, "wn").standard_normal((500, 2))) == 0 for s in range(40))
    assert zero >= 36
    two = 0
    for s in range(20):
        e = make_rng(s, "ma2").standard_normal(2003)
        L = e[2:] + 0.6 * e[1:-1] + 0.5 * e[:-2]
        two += select_truncation_lag(L) == 2
    assert two > 10


@given(st.integers(0, 10_000), st.integers(1, 10))
def test_truncation_lag_in_range(seed, cap):
    L = make_rng(seed, "range").standard_normal(100)
    assert 0 <= select_truncation_lag(L, cap) <= cap


def test_truncation_lag_cap_limit():
    with pytest.raises(DomainError):
        select_truncation_lag(np.ones(40), cap=11)


def test_sandwich_examples():
    rng = make_rng(3, "sw")
    B = rng.standard_normal((7, 2, 2))
    Lam = B @ np.swapaxes(B, 1, 2) + 0.1 * np.eye(2)
    assert np.allclose(sandwich_Xi(np.tile(np.eye(2), (7, 1, 1)), Lam), Lam)
    assert np.allclose(sandwich_Xi(np.tile(2 * np.eye(2), (7, 1, 1)), Lam), Lam / 4)
    C = rng.standard_normal((7, 2, 2))
    M = C @ np.swapaxes(C, 1, 2) + 0.5 * np.eye(2)
    oracle = np.array([np.linalg.inv(m) @ l @ np.linalg.inv(m) for m, l in zip(M, Lam)])
    Xi = sandwich_Xi(M, Lam)
    assert np.allclose(Xi, oracle, atol=1e-10)
    assert np.allclose(Xi, np.swapaxes(Xi, 1, 2), atol=1e-10)
    perm = [1, 0]
    Xi_p = sandwich_Xi(M[:, perm][:, :, perm], Lam[:, perm][:, :, perm])
    assert np.allclose(Xi_p, Xi[:, perm][:, :, perm], atol=1e-10)


def test_sandwich_flags_singular_points():
    M = np.tile(np.eye(2), (3, 1, 1))
    M[1] = np.diag([1.0, 1e-14])
    Xi = sandwich_Xi(M, np.tile(np.eye(2), (3, 1, 1)))
    assert np.isnan(Xi[1]).all() and np.isfinite(Xi[[0, 2]]).all()


def test_xi_functionals():
    G, p = 11, 3
    pts = np.linspace(0, 1, G)
    eye = np.tile(np.eye(p), (G, 1, 1))
    assert xi_functionals(eye, np.eye(p), eye, 1, pts) == pytest.approx(p)
    assert xi_functionals(eye, np.eye(p), eye, 2, pts) == pytest.approx(p)
    # scalar case against a direct quadrature of (W * A Xi A')^l
    xi = (1 + pts)[:, None, None] * np.ones((G, 1, 1))
    w = (2 - pts)[:, None, None] * np.ones((G, 1, 1))
    for l in (1, 2):
        oracle = np.trapezoid(((2 - pts) * (1 + pts)) ** l, pts)
        assert xi_functionals(xi, np.ones((1, 1)), w, l, pts) == pytest.approx(oracle, rel=1e-12)
    # normalizer weights whiten to (s, s)
    rng = make_rng(0, "xi")
    B = rng.standard_normal((G, p, p))
    Xi = B @ np.swapaxes(B, 1, 2) + np.eye(p)
    A = np.array([[1.0, 0, 0], [0, 1.0, 1.0]])
    W = np.linalg.inv(A @ Xi @ A.T)
    assert xi_functionals(Xi, A, W, 1, pts) == pytest.approx(2.0, abs=1e-10)
    assert xi_functionals(Xi, A, W, 2, pts) == pytest.approx(2.0, abs=1e-10)
    with pytest.raises(CovarianceError):
        xi_functionals(eye, np.eye(p), -eye, 1, pts)


def test_psd_projection():
    S = np.array([[[1.0, 2.0], [2.0, 1.0]]])
    P = psd_project(S)
    vals = np.linalg.eigvalsh(P)
    assert vals.min() >= 1e-10 * vals.max() * 0.999
    assert np.allclose(P, np.swapaxes(P, 1, 2))


def test_estimate_covariance_field(noisy_sample):
    fit = local_linear_fit(noisy_sample, epanechnikov, 0.3)
    cov = estimate_covariance(noisy_sample, fit, epanechnikov)
    for M in (cov.M_hat, cov.Lambda_hat, cov.Xi_hat):
        assert np.allclose(M, np.swapaxes(M, 1, 2), atol=1e-10)
    assert np.all(np.linalg.eigvalsh(cov.Lambda_hat) >= 0)
    assert cov.bandwidths["varpi"] >= noisy_sample.n ** -0.2
    assert cov.truncation_lag >= 0
