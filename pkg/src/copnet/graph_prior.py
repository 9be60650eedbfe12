"""Latent probit random-graph model tying the K conditional-independence
graphs together.

For groups k = 1..K and edge slots e (unordered trait pairs), the model
conditions each indicator on the same slot in the other groups:

    P(g_{k,e} = 1 | rest) = Phi( alpha_k
                                 + beta' sum_{k' != k} sim_{kk'} s_{k',e}
                                 + c_k'  sum_{k' != k} c_{k'}  s_{k',e} )

with s = +1 for a present edge and -1 for an absent one.  The product of
these conditionals over (k, e) is treated as a composite likelihood; all
parameters carry N(0, prior_variance) priors and are updated by one scan of
probit data augmentation (truncated-normal utilities) followed by conjugate
normal draws.  Four variants switch the beta and latent-space terms on/off.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr, ndtri

from . import kernels
from .dataset import ProximityData
from .errors import ChainError

VARIANTS = ("intercepts", "intercepts+ls", "intercepts+prox", "intercepts+prox+ls")

PRIOR_VARIANCE = 10.0
LATENT_DIM = 2


def variant_uses_proximity(variant):
    return "prox" in _check_variant(variant)


def variant_uses_latent_space(variant):
    return _check_variant(variant).endswith("ls")


def _check_variant(variant):
    if variant not in VARIANTS:
        raise ChainError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return variant


def edge_slots(p):
    """Unordered trait pairs in lexicographic (j1 < j2) order."""
    iu = np.triu_indices(p, 1)
    return list(zip(iu[0].tolist(), iu[1].tolist()))


def n_edge_slots(p):
    return p * (p - 1) // 2


@dataclass(frozen=True)
class GraphFamily:
    """K symmetric binary adjacency matrices over the same p traits."""

    adj: np.ndarray  # (K, p, p) bool

    def __post_init__(self):
        a = np.asarray(self.adj, dtype=bool)
        if a.ndim != 3 or a.shape[1] != a.shape[2]:
            raise ChainError("graph family must be a (K, p, p) array")
        if np.any(a != np.transpose(a, (0, 2, 1))):
            raise ChainError("adjacency matrices must be symmetric")
        if np.any(a[:, np.arange(a.shape[1]), np.arange(a.shape[1])]):
            raise ChainError("adjacency matrices must have zero diagonals")
        object.__setattr__(self, "adj", a)

    @property
    def n_groups(self):
        return self.adj.shape[0]

    @property
    def p(self):
        return self.adj.shape[1]

    def slot_matrix(self):
        """(K, E) boolean edge-slot indicators."""
        iu = np.triu_indices(self.p, 1)
        return self.adj[:, iu[0], iu[1]]

    @staticmethod
    def from_slot_matrix(slots, p):
        slots = np.asarray(slots, dtype=bool)
        K = slots.shape[0]
        adj = np.zeros((K, p, p), dtype=bool)
        iu = np.triu_indices(p, 1)
        adj[:, iu[0], iu[1]] = slots
        adj |= np.transpose(adj, (0, 2, 1))
        return GraphFamily(adj)


@dataclass(frozen=True)
class PriorParams:
    """Parameters of the random-graph model under one of the four variants."""

    variant: str
    alpha: np.ndarray                 # (K,)
    beta: np.ndarray                  # (d,), empty when no proximity term
    positions: np.ndarray | None = None  # (K, 2) latent locations

    def __post_init__(self):
        _check_variant(self.variant)
        alpha = np.asarray(self.alpha, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        if not np.all(np.isfinite(alpha)) or not np.all(np.isfinite(beta)):
            raise ChainError("prior parameters must be finite")
        if variant_uses_proximity(self.variant):
            if beta.size == 0:
                raise ChainError(f"variant {self.variant!r} needs a beta vector")
        elif beta.size:
            raise ChainError(f"variant {self.variant!r} does not take beta")
        if variant_uses_latent_space(self.variant):
            pos = np.asarray(self.positions, dtype=float)
            if pos.shape != (alpha.shape[0], LATENT_DIM):
                raise ChainError(f"positions must be (K, {LATENT_DIM})")
            if not np.all(np.isfinite(pos)):
                raise ChainError("latent positions must be finite")
            object.__setattr__(self, "positions", pos)
        elif self.positions is not None:
            raise ChainError(f"variant {self.variant!r} does not take positions")

    @property
    def n_groups(self):
        return self.alpha.shape[0]


def _sim_tensor(prox, groups_or_K, variant):
    if not variant_uses_proximity(variant):
        return None
    if prox is None:
        raise ChainError(f"variant {variant!r} requires proximity data")
    if isinstance(prox, ProximityData):
        raise ChainError(
            "pass a (K, K, d) proximity tensor (ProximityData.tensor(groups))"
        )
    t = np.asarray(prox, dtype=float)
    if t.ndim != 3 or t.shape[0] != t.shape[1]:
        raise ChainError("proximity tensor must be (K, K, d)")
    return t


def edge_scores_all(family: GraphFamily, params: PriorParams, sim_tensor=None):
    """Probit arguments for every (group, edge slot); (K, E) array."""
    S = np.where(family.slot_matrix(), 1.0, -1.0)  # (K, E)
    K, E = S.shape
    scores = np.repeat(params.alpha[:, None], E, axis=1)
    if variant_uses_proximity(params.variant):
        t = _sim_tensor(sim_tensor, K, params.variant)
        if t.shape[2] != params.beta.shape[0]:
            raise ChainError("beta dimension does not match proximity tensor")
        # U[k, e, :] = sum_{k'} sim[k, k', :] * S[k', e]   (diagonal sim is 0)
        U = np.einsum("abd,be->aed", t, S)
        scores += U @ params.beta
    if variant_uses_latent_space(params.variant):
        C = params.positions
        tot = S.T @ C                                   # (E, 2)
        V = tot[None, :, :] - S[:, :, None] * C[:, None, :]
        scores += np.einsum("ked,kd->ke", V, C)
    return scores


def edge_score(k, e, family: GraphFamily, params: PriorParams, sim_tensor=None):
    """Probit argument for edge slot ``e = (j1, j2)`` in group ``k``."""
    j1, j2 = e
    if j1 == j2:
        raise ChainError("edge slots are off-diagonal pairs")
    slots = edge_slots(family.p)
    idx = slots.index((min(j1, j2), max(j1, j2)))
    return float(edge_scores_all(family, params, sim_tensor)[k, idx])


def edge_prior_prob(k, e, family: GraphFamily, params: PriorParams, sim_tensor=None):
    """Phi(edge score): conditional prior edge probability."""
    return float(ndtr(edge_score(k, e, family, params, sim_tensor)))


def edge_prior_probs_all(family, params, sim_tensor=None):
    return ndtr(edge_scores_all(family, params, sim_tensor))


def draw_edge_utilities(family: GraphFamily, params: PriorParams, sim_tensor, rng):
    """Albert-Chib step: z ~ N(score, 1) truncated to the side given by the
    edge indicator (positive for present edges)."""
    scores = edge_scores_all(family, params, sim_tensor)
    g = family.slot_matrix()
    lo = np.where(g, 0.0, -np.inf)
    hi = np.where(g, np.inf, 0.0)
    u = rng.random(scores.shape)
    return kernels.trunc_norm_from_u_np(scores, 1.0, lo, hi, u)


def gibbs_update_params(
    family: GraphFamily,
    params: PriorParams,
    sim_tensor,
    rng,
    prior_variance=PRIOR_VARIANCE,
    return_utilities=False,
):
    """One full data-augmentation scan; returns updated parameters.

    The scan draws the edge utilities, then updates alpha (per group), beta
    (jointly) and each latent position from their exact normal full
    conditionals under the composite likelihood.  The latent-position
    conditional collects both the group's own factors and the factors of the
    other groups in which c_k appears.
    """
    v0 = float(prior_variance)
    if v0 <= 0:
        raise ChainError("prior variance must be positive")
    use_prox = variant_uses_proximity(params.variant)
    use_ls = variant_uses_latent_space(params.variant)
    S = np.where(family.slot_matrix(), 1.0, -1.0)
    K, E = S.shape

    z = draw_edge_utilities(family, params, sim_tensor, rng)

    alpha = params.alpha.copy()
    beta = params.beta.copy()
    C = params.positions.copy() if use_ls else None

    if use_prox:
        t = _sim_tensor(sim_tensor, K, params.variant)
        U = np.einsum("abd,be->aed", t, S)     # (K, E, d)
        d = U.shape[2]
    else:
        U = np.zeros((K, E, 0))
        d = 0

    def ls_part():
        if not use_ls:
            return np.zeros((K, E))
        tot = S.T @ C
        V = tot[None, :, :] - S[:, :, None] * C[:, None, :]
        return np.einsum("ked,kd->ke", V, C)

    # --- alpha (per group, conditionally independent) --------------------
    resid = z - U @ beta - ls_part()
    prec_a = E + 1.0 / v0
    mean_a = resid.sum(axis=1) / prec_a
    alpha = mean_a + rng.standard_normal(K) / np.sqrt(prec_a)

    # --- beta (joint multivariate normal) --------------------------------
    if use_prox:
        r = z - alpha[:, None] - ls_part()
        Uf = U.reshape(K * E, d)
        P = np.eye(d) / v0 + Uf.T @ Uf
        h = Uf.T @ r.reshape(K * E)
        L = np.linalg.cholesky(P)
        mean_b = np.linalg.solve(P, h)
        beta = mean_b + np.linalg.solve(L.T, rng.standard_normal(d))

    # --- latent positions (sequential over groups) ------------------------
    if use_ls:
        ub = U @ beta
        for k in range(K):
            tot = S.T @ C                                   # (E, 2)
            V = tot[None, :, :] - S[:, :, None] * C[:, None, :]
            R0 = z - alpha[:, None] - ub - np.einsum("ked,kd->ke", V, C)
            mask = np.arange(K) != k
            M = C[mask].T @ C[mask]                          # (2, 2)
            own_v = V[k]                                     # (E, 2)
            own_r = z[k] - alpha[k] - ub[k]
            Gm = C[mask].T @ R0[mask]                        # (2, E)
            h = own_v.T @ own_r + Gm @ S[k] + E * (M @ C[k])
            P = np.eye(LATENT_DIM) / v0 + own_v.T @ own_v + E * M
            L = np.linalg.cholesky(P)
            C[k] = np.linalg.solve(P, h) + np.linalg.solve(L.T, rng.standard_normal(LATENT_DIM))

    out = replace(params, alpha=alpha, beta=beta,
                  positions=C if use_ls else None)
    if return_utilities:
        return out, z
    return out


def initial_params(family: GraphFamily, sim_tensor, variant, rng,
                   position_sd=0.1) -> PriorParams:
    """Warm start: alpha from the graph densities (floored at one edge),
    positions near the origin, beta at zero."""
    _check_variant(variant)
    K = family.n_groups
    E = max(n_edge_slots(family.p), 1)
    dens = family.slot_matrix().mean(axis=1)
    dens = np.clip(dens, 1.0 / E, 1.0 - 0.5 / E)
    alpha = ndtri(dens)
    if variant_uses_proximity(variant):
        t = _sim_tensor(sim_tensor, K, variant)
        beta = np.zeros(t.shape[2])
    else:
        beta = np.zeros(0)
    positions = (
        rng.normal(scale=position_sd, size=(K, LATENT_DIM))
        if variant_uses_latent_space(variant)
        else None
    )
    return PriorParams(variant=variant, alpha=alpha, beta=beta, positions=positions)
