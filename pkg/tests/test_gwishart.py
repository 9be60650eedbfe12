import itertools
import math

import numpy as np
import pytest
from scipy import integrate
from scipy.special import multigammaln

from copnet.errors import ChainError
from copnet.gwishart import (
    GWishartParams,
    clique_separator_factorization,
    default_prior,
    is_decomposable,
    log_complete_const,
    log_gwishart_norm_decomposable,
    log_multivariate_gamma,
    log_norm_ratio_one_edge,
    posterior_params,
    sample_gwishart,
    validate_precision,
)


def _adj(p, edges):
    a = np.zeros((p, p), dtype=bool)
    for i, j in edges:
        a[i, j] = a[j, i] = True
    return a


def _spd(p, rng, scale=1.0):
    A = rng.normal(size=(p, p))
    return scale * (A @ A.T + p * np.eye(p))


def test_params_validation():
    with pytest.raises(ChainError):
        GWishartParams(b=2.0, D=np.eye(2))
    with pytest.raises(ChainError):
        GWishartParams(b=3.0, D=np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_posterior_params_identity_case():
    prior = default_prior(2)
    assert posterior_params(prior, np.zeros((0, 2))) is prior
    post = posterior_params(prior, np.zeros((1, 2)))
    assert post.b == 4.0
    np.testing.assert_array_equal(post.D, np.eye(2))


def test_posterior_params_accumulates_scatter():
    rng = np.random.default_rng(0)
    Z = rng.standard_normal((100, 2))
    post = posterior_params(default_prior(2), Z)
    np.testing.assert_allclose(post.D, np.eye(2) + Z.T @ Z)
    assert post.b == 103.0
    # law of large numbers: scatter of iid N(0, I) rows is close to n * I
    assert np.abs(post.D - np.eye(2) - 100 * np.eye(2)).max() < 4 * 100 / math.sqrt(100)


def test_p1_empty_graph_is_gamma():
    # density ~ w^{(b-2)/2} e^{-w/2}: Gamma(3/2, 1/2) has mean 3 for b=3, D=1
    rng = np.random.default_rng(1)
    draws = np.array(
        [sample_gwishart(np.zeros((1, 1), bool), default_prior(1), rng, n_inner=1)[0, 0]
         for _ in range(100_000)]
    )
    se = draws.std() / math.sqrt(draws.size)
    assert draws.mean() == pytest.approx(3.0, abs=3 * se)
    assert draws.mean() == pytest.approx(3.0, abs=0.05)


def test_full_graph_matches_wishart_mean():
    rng = np.random.default_rng(2)
    p = 3
    D = _spd(p, rng)
    params = GWishartParams(b=3.0, D=D)
    adj = _adj(p, [(i, j) for i in range(p) for j in range(i + 1, p)])
    omega = sample_gwishart(adj, params, rng, n_inner=100)
    n_draws = 30_000
    acc = np.zeros((p, p))
    samples = np.empty(n_draws)
    for t in range(n_draws):
        omega = sample_gwishart(adj, params, rng, n_inner=2, warm_start=omega)
        acc += omega
        samples[t] = omega[0, 0]
    mean = acc / n_draws
    target = (3.0 + p - 1) * np.linalg.inv(D)
    # batch-means standard error on a representative entry, inflated for
    # autocorrelation across warm-started draws
    batches = samples.reshape(100, -1).mean(axis=1)
    se = batches.std(ddof=1) / math.sqrt(len(batches))
    assert mean[0, 0] == pytest.approx(target[0, 0], abs=3 * se)
    np.testing.assert_allclose(mean, target, rtol=0.05)


def test_empty_graph_zero_pattern_exact():
    rng = np.random.default_rng(3)
    adj = np.zeros((3, 3), dtype=bool)
    omega = sample_gwishart(adj, default_prior(3), rng, n_inner=50)
    off = omega[~np.eye(3, dtype=bool)]
    assert np.all(off == 0.0)


def test_zero_pattern_and_spd_random_graphs():
    rng = np.random.default_rng(4)
    p = 6
    for _ in range(20):
        iu = np.triu_indices(p, 1)
        mask = rng.random(len(iu[0])) < 0.4
        adj = _adj(p, list(zip(iu[0][mask], iu[1][mask])))
        omega = sample_gwishart(adj, default_prior(p), rng, n_inner=10)
        validate_precision(omega, adj, tol=0.0)


def test_spd_preserved_over_long_run_p10():
    rng = np.random.default_rng(5)
    p = 10
    iu = np.triu_indices(p, 1)
    mask = rng.random(len(iu[0])) < 0.3
    adj = _adj(p, list(zip(iu[0][mask], iu[1][mask])))
    params = default_prior(p)
    omega = sample_gwishart(adj, params, rng, n_inner=20)
    for _ in range(100_000):
        omega = sample_gwishart(adj, params, rng, n_inner=1, warm_start=omega)
    validate_precision(omega, adj, tol=0.0)


def test_decomposable_moments_match_clique_formula():
    # independent oracle: for decomposable G the mean is the clique-padded
    # sum of complete-graph Wishart means minus the separator terms
    rng = np.random.default_rng(6)
    p = 3
    adj = _adj(p, [(0, 1), (1, 2)])  # path, separator {1}
    b = 4.0
    D = _spd(p, rng)
    target = np.zeros((p, p))
    for c in ([0, 1], [1, 2]):
        sub = np.linalg.inv(D[np.ix_(c, c)]) * (b + len(c) - 1)
        target[np.ix_(c, c)] += sub
    target[1, 1] -= b * (1.0 / D[1, 1])
    params = GWishartParams(b=b, D=D)
    omega = sample_gwishart(adj, params, rng, n_inner=100)
    n_draws = 30_000
    acc = np.zeros((p, p))
    samples = np.empty(n_draws)
    for t in range(n_draws):
        omega = sample_gwishart(adj, params, rng, n_inner=2, warm_start=omega)
        acc += omega
        samples[t] = omega[0, 1]
    mean = acc / n_draws
    batches = samples.reshape(100, -1).mean(axis=1)
    se = batches.std(ddof=1) / math.sqrt(len(batches))
    assert mean[0, 1] == pytest.approx(target[0, 1], abs=3 * se)
    np.testing.assert_allclose(mean, target, rtol=0.06, atol=0.02)


def test_log_multivariate_gamma_matches_scipy():
    for q in (1, 2, 3, 5):
        for a in (3.0, 10.5, 47.25):
            if a <= 0.5 * (q - 1):
                continue
            assert log_multivariate_gamma(a, q) == pytest.approx(
                multigammaln(a, q), rel=1e-12
            )


def test_log_complete_const_p1_quadrature_oracle():
    # independent oracle: numerical integral of w^{(b-2)/2} exp(-d w / 2)
    b, d = 3.7, 2.3
    val, _ = integrate.quad(lambda w: w ** ((b - 2) / 2) * np.exp(-d * w / 2), 0, 200)
    D = np.array([[d]])
    assert log_complete_const(b, D, [0]) == pytest.approx(math.log(val), rel=1e-8)


def test_one_edge_ratio_exact_at_p3():
    rng = np.random.default_rng(7)
    b = 4.5
    D = _spd(3, rng)
    slots = [(0, 1), (0, 2), (1, 2)]
    for bits in itertools.product([0, 1], repeat=3):
        edges = [s for s, z in zip(slots, bits) if z]
        adj = _adj(3, edges)
        base = log_gwishart_norm_decomposable(adj, b, D)
        for s in slots:
            if adj[s]:
                continue
            adj2 = adj.copy()
            adj2[s] = adj2[s[::-1]] = True
            full = log_gwishart_norm_decomposable(adj2, b, D) - base
            local = log_norm_ratio_one_edge(adj, s[0], s[1], b, D)
            assert local == pytest.approx(full, abs=1e-10)


def test_one_edge_ratio_identity_fast_path():
    rng = np.random.default_rng(8)
    for p in (3, 5):
        I = np.eye(p)
        iu = np.triu_indices(p, 1)
        for t in range(20):
            mask = rng.random(len(iu[0])) < 0.5
            adj = _adj(p, list(zip(iu[0][mask], iu[1][mask])))
            i, j = iu[0][t % len(iu[0])], iu[1][t % len(iu[0])]
            b = 3.0 + (t % 3)
            slow = log_norm_ratio_one_edge(adj, i, j, b, I)
            fast = log_norm_ratio_one_edge(adj, i, j, b, I, identity_scale=True)
            assert fast == pytest.approx(slow, abs=1e-10)


def test_decomposability_and_factorization():
    square = _adj(4, [(0, 1), (1, 2), (2, 3), (0, 3)])
    assert not is_decomposable(square)
    with pytest.raises(ChainError):
        clique_separator_factorization(square)
    tri = _adj(4, [(0, 1), (1, 2), (2, 3), (0, 3), (0, 2)])
    assert is_decomposable(tri)
    cliques, seps = clique_separator_factorization(tri)
    assert sorted(len(c) for c in cliques) == [3, 3]
    assert sorted(seps) == [(0, 2)]


def test_warm_start_projects_pattern():
    rng = np.random.default_rng(9)
    p = 4
    full = _adj(p, [(i, j) for i in range(p) for j in range(i + 1, p)])
    omega = sample_gwishart(full, default_prior(p), rng, n_inner=20)
    sub = _adj(p, [(0, 1)])
    omega2 = sample_gwishart(sub, default_prior(p), rng, n_inner=5, warm_start=omega)
    validate_precision(omega2, sub, tol=0.0)
