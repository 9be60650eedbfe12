"""Observed-data copula log-likelihood via multivariate normal rectangle
probabilities.

Each respondent contributes log P(lo_i < Z <= hi_i) under a zero-mean normal
with the group's correlation matrix (the precision rescaled to unit
variances; the copula pins unit marginals).  Rectangles are evaluated with
the Genz sequential-conditioning algorithm driven by scrambled Sobol points,
vectorized across respondents; missing coordinates carry infinite limits and
integrate out exactly.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

from .errors import ChainError

REL_TOL = 1e-3
MIN_LOG2_POINTS = 8
MAX_LOG2_POINTS = 12
_TINY = 1e-300


@lru_cache(maxsize=64)
def _sobol_pair(dim, log2_points, seed):
    """Two independently scrambled Sobol point sets (cached: the same points
    serve every group and every deviance draw of a run)."""
    s1, s2 = np.random.SeedSequence(seed).spawn(2)
    w1 = qmc.Sobol(dim, scramble=True, seed=np.random.default_rng(s1)).random_base2(
        log2_points
    )
    w2 = qmc.Sobol(dim, scramble=True, seed=np.random.default_rng(s2)).random_base2(
        log2_points
    )
    w1.setflags(write=False)
    w2.setflags(write=False)
    return w1, w2


def correlation_from_precision(omega):
    sigma = np.linalg.inv(np.asarray(omega, dtype=float))
    d = np.sqrt(np.diag(sigma))
    return sigma / np.outer(d, d)


def _genz_estimate(L, a, b, W):
    """Mean Genz integrand over QMC points W for a batch of rectangles.

    L: (p, p) lower Cholesky of the correlation matrix; a, b: (B, p) limits;
    W: (M, p-1) points in [0, 1).  Returns (B,) probability estimates.
    """
    B, p = a.shape
    M = W.shape[0]
    d = ndtr(a[:, 0] / L[0, 0])[:, None]          # (B, 1)
    e = ndtr(b[:, 0] / L[0, 0])[:, None]
    f = np.repeat(e - d, M, axis=1)               # (B, M)
    ys = []
    for i in range(1, p):
        w = W[None, :, i - 1]                      # (1, M)
        q = d + w * (e - d)
        y = ndtri(np.clip(q, _TINY, 1.0 - 1e-16))
        ys.append(y)
        t = np.zeros((B, M))
        for l, yl in enumerate(ys):
            t += L[i, l] * yl
        with np.errstate(invalid="ignore"):
            d = ndtr((a[:, i][:, None] - t) / L[i, i])
            e = ndtr((b[:, i][:, None] - t) / L[i, i])
        f = f * (e - d)
    return f.mean(axis=1)


def rectangle_log_probs(corr, lo, hi, seed, rel_tol=REL_TOL,
                        min_log2_points=MIN_LOG2_POINTS,
                        max_log2_points=MAX_LOG2_POINTS):
    """log P(lo < Z <= hi) rowwise under N(0, corr).

    Runs two independently scrambled Sobol sequences and doubles the point
    count until they agree to ``rel_tol`` relative error on every rectangle
    (or the cap is reached); returns the log of the averaged estimate.
    """
    corr = np.asarray(corr, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != hi.shape or lo.ndim != 2:
        raise ChainError("interval matrices must be (n, p) and congruent")
    B, p = lo.shape
    if corr.shape != (p, p):
        raise ChainError("correlation matrix does not match interval width")
    if p == 1:
        prob = np.clip(ndtr(hi[:, 0]) - ndtr(lo[:, 0]), _TINY, None)
        return np.log(prob)
    L = np.linalg.cholesky(corr)
    for m in range(min_log2_points, max_log2_points + 1):
        w1, w2 = _sobol_pair(p - 1, m, int(seed))
        est1 = _genz_estimate(L, lo, hi, w1)
        est2 = _genz_estimate(L, lo, hi, w2)
        est = 0.5 * (est1 + est2)
        # near-zero rectangles are accepted on absolute error: their log
        # contribution is already below any practical resolution
        tol = np.maximum(rel_tol * est, 1e-8)
        if np.max(np.abs(est1 - est2) - tol) < 0.0:
            break
    return np.log(np.clip(est, _TINY, None))


def copula_log_likelihood(omegas, interval_sets, seed, rel_tol=REL_TOL):
    """Total observed-data log-likelihood over groups.

    ``omegas``: sequence of (p, p) precisions; ``interval_sets``: matching
    sequence of (lo, hi) interval matrices from the fitted marginals.
    """
    total = 0.0
    for idx, (omega, (lo, hi)) in enumerate(zip(omegas, interval_sets)):
        corr = correlation_from_precision(omega)
        total += float(
            rectangle_log_probs(corr, lo, hi, seed=seed + idx, rel_tol=rel_tol).sum()
        )
    return total
