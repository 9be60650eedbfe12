"""Gibbs sampling of the latent Gaussian data behind the ordinal responses.

Each coordinate Z_ij is redrawn from its full conditional
N(mu_ij, 1/omega_jj) truncated to the observation's copula interval, where
mu_ij = -(1/omega_jj) * sum_{l != j} omega_jl Z_il (zero-mean Gaussian with
precision omega).  Rows are conditionally independent given omega; the scan
is systematic (rows in order, coordinates 1..p within a row) so runs are
reproducible under a fixed seed.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ChainError


def truncated_normal_sample(mu, sigma, lo, hi, rng):
    """One draw from N(mu, sigma^2) conditioned on (lo, hi)."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not lo < hi:
        raise ValueError(f"empty interval ({lo}, {hi})")
    a = (lo - mu) / sigma
    b = (hi - mu) / sigma
    if a == b:
        raise ValueError(
            f"interval ({lo}, {hi}) has zero width at scale sigma={sigma}"
        )
    return float(kernels.trunc_norm_from_u(mu, sigma, lo, hi, rng.random()))


def truncated_normal_array(mu, sigma, lo, hi, rng):
    """Vectorized truncated-normal draws (one uniform per entry)."""
    u = rng.random(np.broadcast(np.asarray(mu, dtype=float), lo).shape)
    return kernels.trunc_norm_from_u_np(mu, sigma, lo, hi, u)


def _check_spd(omega):
    omega = np.asarray(omega, dtype=float)
    if omega.ndim != 2 or omega.shape[0] != omega.shape[1]:
        raise ChainError("precision matrix must be square")
    if np.abs(omega - omega.T).max() > 1e-10:
        raise ChainError("precision matrix must be symmetric")
    try:
        np.linalg.cholesky(omega)
    except np.linalg.LinAlgError:
        raise ChainError("precision matrix is not positive definite") from None
    return omega


def gibbs_sweep_latent(Z, omega, lo, hi, rng):
    """One full systematic scan over all entries of Z, in place.

    Returns Z for convenience.  ``lo``/``hi`` are the interval matrices from
    :func:`copnet.marginals.interval_matrix`; missing observations carry
    (-inf, +inf) and are drawn from the unconstrained conditional.
    """
    omega = _check_spd(omega)
    Z = np.ascontiguousarray(Z, dtype=float)
    if Z.shape != lo.shape or Z.shape != hi.shape:
        raise ChainError("interval matrices must match the latent matrix shape")
    if omega.shape[0] != Z.shape[1]:
        raise ChainError("precision dimension must match the trait count")
    u = rng.random(Z.shape)
    kernels.sweep_latent(Z, omega, np.ascontiguousarray(lo), np.ascontiguousarray(hi), u)
    return Z


def initial_latent(lo, hi):
    """Deterministic starting values: the probability-space midpoint of each
    interval mapped through a clamped normal quantile (0 for the full line)."""
    from scipy.special import ndtr, ndtri

    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    mid = 0.5 * (ndtr(lo) + ndtr(hi))
    return ndtri(np.clip(mid, 1e-12, 1.0 - 1e-12))
