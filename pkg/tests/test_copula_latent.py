import math

import numpy as np
import pytest

from copnet.copula_latent import (
    gibbs_sweep_latent,
    initial_latent,
    truncated_normal_sample,
)
from copnet.errors import ChainError


def test_untruncated_mean():
    rng = np.random.default_rng(0)
    x = np.array([
        truncated_normal_sample(0.0, 1.0, -np.inf, np.inf, rng) for _ in range(200_000)
    ])
    assert abs(x.mean()) < 0.005


def test_half_normal_mean():
    # analytic oracle: E[N(0,1) | X > 0] = sqrt(2/pi)
    rng = np.random.default_rng(1)
    x = np.array([
        truncated_normal_sample(0.0, 1.0, 0.0, np.inf, rng) for _ in range(1_000_000)
    ])
    assert x.mean() == pytest.approx(math.sqrt(2.0 / math.pi), abs=0.005)


def test_far_tail_interval_robust():
    rng = np.random.default_rng(2)
    x = np.array([
        truncated_normal_sample(0.0, 1.0, 5.0, 6.0, rng) for _ in range(20_000)
    ])
    assert np.all((x > 5.0) & (x < 6.0))
    assert np.all(np.isfinite(x))


def test_invalid_arguments():
    rng = np.random.default_rng(3)
    with pytest.raises(ValueError):
        truncated_normal_sample(0.0, 0.0, 0.0, 1.0, rng)
    with pytest.raises(ValueError):
        truncated_normal_sample(0.0, 1.0, 2.0, 1.0, rng)
    with pytest.raises(ValueError, match="zero width"):
        # bounds distinct but indistinguishable after standardization
        truncated_normal_sample(1e300, 1.0, 5.0, np.nextafter(5.0, 6.0), rng)


def _sweep_many(Z, omega, lo, hi, rng, n):
    for _ in range(n):
        gibbs_sweep_latent(Z, omega, lo, hi, rng)
    return Z


def test_identity_precision_gives_uncorrelated_columns():
    rng = np.random.default_rng(4)
    n, p = 100_000, 3
    lo = np.full((n, p), -np.inf)
    hi = np.full((n, p), np.inf)
    Z = np.zeros((n, p))
    _sweep_many(Z, np.eye(p), lo, hi, rng, 2)
    c = np.corrcoef(Z.T)
    off = c[np.triu_indices(p, 1)]
    assert np.all(np.abs(off) < 0.01)


def test_bivariate_long_run_correlation():
    # omega offdiag -0.5 -> covariance = inv(omega) has correlation +0.5
    omega = np.array([[1.0, -0.5], [-0.5, 1.0]])
    rng = np.random.default_rng(5)
    n = 60_000
    lo = np.full((n, 2), -np.inf)
    hi = np.full((n, 2), np.inf)
    Z = np.zeros((n, 2))
    _sweep_many(Z, omega, lo, hi, rng, 12)
    r = np.corrcoef(Z.T)[0, 1]
    assert r == pytest.approx(0.5, abs=0.01)


def test_pinned_coordinate_drives_conditional_mean():
    # coordinate 0 pinned near 2 -> coordinate 1 has mean rho * 2
    omega = np.array([[1.0, -0.5], [-0.5, 1.0]])
    sigma = np.linalg.inv(omega)
    rho = sigma[0, 1] / math.sqrt(sigma[0, 0] * sigma[1, 1])
    rng = np.random.default_rng(6)
    n = 20_000
    lo = np.full((n, 2), -np.inf)
    hi = np.full((n, 2), np.inf)
    lo[:, 0] = 1.99
    hi[:, 0] = 2.01
    Z = initial_latent(lo, hi)
    _sweep_many(Z, omega, lo, hi, rng, 3)
    # conditional mean of Z2 given Z1 = 2 under unit-diagonal covariance scale
    expected = rho * math.sqrt(sigma[1, 1] / sigma[0, 0]) * 2.0
    assert Z[:, 1].mean() == pytest.approx(expected, abs=0.05)


def test_draws_stay_inside_intervals():
    rng = np.random.default_rng(7)
    n, p = 500, 4
    A = rng.normal(size=(p, p))
    omega = A @ A.T + p * np.eye(p)
    lo = rng.normal(size=(n, p)) - 0.5
    hi = lo + rng.uniform(0.05, 2.0, size=(n, p))
    lo[:, 1] = -np.inf
    hi[:, 2] = np.inf
    Z = initial_latent(lo, hi)
    for _ in range(5):
        gibbs_sweep_latent(Z, omega, lo, hi, rng)
        assert np.all(Z > lo) and np.all(Z < hi)


def test_missing_coordinate_variance_matches_conditional():
    # with every other coordinate pinned, a fully missing coordinate is drawn
    # from the unconstrained conditional with variance 1/omega_jj
    omega = np.array([[1.0, -0.6], [-0.6, 1.0]])
    rng = np.random.default_rng(8)
    n = 40_000
    lo = np.full((n, 2), -np.inf)
    hi = np.full((n, 2), np.inf)
    lo[:, 0] = 0.999
    hi[:, 0] = 1.001
    Z = initial_latent(lo, hi)
    _sweep_many(Z, omega, lo, hi, rng, 3)
    assert Z[:, 1].var() == pytest.approx(1.0 / omega[1, 1], abs=0.03)


def test_detailed_balance_moments():
    # unconstrained sweeps leave N(0, omega^{-1}) invariant
    rng = np.random.default_rng(9)
    p = 3
    A = rng.normal(size=(p, p))
    omega = A @ A.T + p * np.eye(p)
    sigma = np.linalg.inv(omega)
    n = 50_000
    lo = np.full((n, p), -np.inf)
    hi = np.full((n, p), np.inf)
    L = np.linalg.cholesky(sigma)
    Z = rng.standard_normal((n, p)) @ L.T  # start in equilibrium
    _sweep_many(Z, omega, lo, hi, rng, 4)
    cov = np.cov(Z.T)
    np.testing.assert_allclose(cov, sigma, atol=4 * np.abs(sigma).max() / math.sqrt(n) * 10)
    assert np.all(np.abs(Z.mean(axis=0)) < 4 * np.sqrt(np.diag(sigma) / n) * 3)


def test_non_spd_precision_rejected():
    rng = np.random.default_rng(10)
    Z = np.zeros((5, 2))
    lo = np.full((5, 2), -np.inf)
    hi = np.full((5, 2), np.inf)
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ChainError):
        gibbs_sweep_latent(Z, bad, lo, hi, rng)


def test_initial_latent_inside_intervals():
    lo = np.array([[-np.inf, 0.0, -2.0, 5.0]])
    hi = np.array([[np.inf, np.inf, -1.0, 6.0]])
    Z = initial_latent(lo, hi)
    assert np.all(Z > lo) and np.all(Z < hi)
    assert Z[0, 0] == 0.0
