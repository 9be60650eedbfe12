"""Backend-level checks: normal quantile accuracy, truncated-normal draws,
and agreement between the compiled and numpy kernel paths."""

import math
import os
import subprocess
import sys

import numpy as np
import pytest
from scipy import special, stats

from copnet import kernels


def test_norm_ppf_matches_reference():
    ps = np.concatenate(
        [
            [1e-300, 1e-100, 1e-20, 1e-12, 1e-6, 1e-3],
            np.linspace(0.01, 0.99, 41),
            [1 - 1e-6, 1 - 1e-12, 1 - 1e-16],
        ]
    )
    for p in ps:
        ref = special.ndtri(p)
        assert kernels.norm_ppf(p) == pytest.approx(ref, rel=1e-13, abs=1e-13)


def test_norm_ppf_boundaries():
    assert kernels.norm_ppf(0.0) == -np.inf
    assert kernels.norm_ppf(1.0) == np.inf
    assert kernels.norm_ppf(0.5) == 0.0


def test_norm_cdf_sf_symmetry():
    for x in (-8.0, -1.3, 0.0, 0.7, 5.5):
        assert kernels.norm_cdf(x) == pytest.approx(special.ndtr(x), rel=1e-14)
        assert kernels.norm_sf(x) == pytest.approx(special.ndtr(-x), rel=1e-14)


@pytest.mark.parametrize(
    "mu,sigma,lo,hi",
    [
        (0.0, 1.0, -np.inf, np.inf),
        (0.0, 1.0, 0.0, np.inf),
        (0.0, 1.0, 5.0, 6.0),
        (2.0, 0.5, -np.inf, 1.0),
        (0.0, 1.0, -0.7, 1.3),
        (-3.0, 2.0, -40.0, -20.0),
    ],
)
def test_truncated_moments_match_analytic(mu, sigma, lo, hi):
    # oracle: closed-form truncated normal moments via scipy.stats.truncnorm
    a = (lo - mu) / sigma
    b = (hi - mu) / sigma
    rng = np.random.default_rng(42)
    x = kernels.trunc_norm_from_u_np(mu, sigma, lo, hi, rng.random(400_000))
    assert np.all(x > lo) and np.all(x < hi)
    assert np.all(np.isfinite(x))
    mean_ref = stats.truncnorm.mean(a, b, loc=mu, scale=sigma)
    sd_ref = stats.truncnorm.std(a, b, loc=mu, scale=sigma)
    assert x.mean() == pytest.approx(mean_ref, abs=5 * sd_ref / np.sqrt(x.size) + 1e-12)


def test_scalar_and_vector_paths_agree():
    rng = np.random.default_rng(3)
    u = rng.random(2000)
    for mu, sigma, lo, hi in [
        (0.3, 2.0, -1.0, 0.5),
        (0.0, 1.0, -np.inf, np.inf),
        (2.0, 0.5, 5.0, 6.0),
        (-1.0, 1.0, -np.inf, -3.0),
    ]:
        vec = kernels.trunc_norm_from_u_np(mu, sigma, lo, hi, u)
        scal = np.array([kernels.trunc_norm_from_u(mu, sigma, lo, hi, ui) for ui in u])
        np.testing.assert_allclose(vec, scal, atol=1e-12)


def test_sweep_backends_agree_on_shared_uniforms():
    rng = np.random.default_rng(11)
    n, p = 300, 5
    A = rng.normal(size=(p, p))
    omega = A @ A.T + p * np.eye(p)
    Z1 = rng.normal(size=(n, p))
    Z2 = Z1.copy()
    lo = np.full((n, p), -np.inf)
    hi = np.full((n, p), np.inf)
    lo[:, 0] = 0.0
    hi[:, 1] = 0.5
    u = rng.random((n, p))
    kernels.sweep_latent_loop(Z1, omega, lo, hi, u)
    kernels.sweep_latent_numpy(Z2, omega, lo, hi, u)
    np.testing.assert_allclose(Z1, Z2, atol=1e-8)
    assert np.all(Z1[:, 0] > 0.0) and np.all(Z1[:, 1] < 0.5)


def test_gwishart_backends_share_stream():
    p = 4
    rng = np.random.default_rng(0)
    A = rng.normal(size=(p, p))
    D = A @ A.T + p * np.eye(p)
    iu = np.triu_indices(p, 1)
    ei = iu[0].astype(np.int64)
    ej = iu[1].astype(np.int64)
    o1 = np.eye(p)
    o2 = np.eye(p)
    kernels.gwishart_inner_loop(o1, ei, ej, 4.0, D, 5, np.random.default_rng(7))
    kernels._gwishart_inner_impl(o2, ei, ej, 4.0, D, 5, np.random.default_rng(7))
    np.testing.assert_array_equal(o1, o2)


def test_gamma_from_rng_moments():
    rng = np.random.default_rng(5)
    for shape in (0.7, 1.5, 4.0):
        x = np.array([kernels.gamma_from_rng(rng, shape) for _ in range(60_000)])
        assert x.mean() == pytest.approx(shape, rel=0.03)
        assert x.var() == pytest.approx(shape, rel=0.06)


def test_env_flag_selects_numpy_backend():
    code = (
        "import copnet.kernels as k; import numpy as np; "
        "assert not k.USE_NUMBA; "
        "Z = np.zeros((4, 2)); "
        "lo = np.full((4, 2), -np.inf); hi = -lo; "
        "k.sweep_latent(Z, np.eye(2), lo, hi, np.random.default_rng(0).random((4, 2))); "
        "assert np.all(np.isfinite(Z)); print('ok')"
    )
    env = dict(os.environ, COPNET_NO_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True
    )
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == "ok"
