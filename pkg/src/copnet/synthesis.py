"""Forward generators for every layer of the model, plus the small-graph
exact-posterior oracle used by the tests and acceptance suite.

A :class:`SyntheticScenario` bundles a fully realized ground truth (graph
family, precisions, marginal models, proximity); scenarios are built
deterministically from a small JSON recipe with an explicit seed.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtr

from . import gwishart
from .dataset import MISSING, ProximityData, SurveyDataset, TraitSpec
from .errors import ChainError, DataError
from .graph_prior import (
    LATENT_DIM,
    GraphFamily,
    PriorParams,
    edge_slots,
    variant_uses_latent_space,
    variant_uses_proximity,
)
from .kernels import _jit, norm_cdf
from .marginals import OrdinalMarginalModel, _link_funcs

DEFAULT_FAMILY_SWEEPS = 500


# ---------------------------------------------------------------------------
# graph family generation (Gibbs over the conditional auto-probit model)
# ---------------------------------------------------------------------------


def _family_sweeps_impl(S, sim, beta, C, alpha, n_sweeps, use_prox, use_ls, rng):
    K, E = S.shape
    d = beta.shape[0]
    tU = np.zeros((K, E, d))
    if use_prox:
        for k in range(K):
            for e in range(E):
                for r in range(d):
                    acc = 0.0
                    for k2 in range(K):
                        acc += sim[k, k2, r] * S[k2, e]
                    tU[k, e, r] = acc
    totC = np.zeros((E, LATENT_DIM))
    if use_ls:
        for e in range(E):
            for r in range(LATENT_DIM):
                acc = 0.0
                for k in range(K):
                    acc += S[k, e] * C[k, r]
                totC[e, r] = acc
    for _ in range(n_sweeps):
        for k in range(K):
            for e in range(E):
                score = alpha[k]
                if use_prox:
                    for r in range(d):
                        score += beta[r] * tU[k, e, r]
                if use_ls:
                    for r in range(LATENT_DIM):
                        score += C[k, r] * (totC[e, r] - S[k, e] * C[k, r])
                new = 1.0 if rng.random() < norm_cdf(score) else -1.0
                if new != S[k, e]:
                    delta = new - S[k, e]
                    S[k, e] = new
                    for k2 in range(K):
                        if use_prox:
                            for r in range(d):
                                tU[k2, e, r] += delta * sim[k2, k, r]
                    if use_ls:
                        for r in range(LATENT_DIM):
                            totC[e, r] += delta * C[k, r]


_family_sweeps = _jit(_family_sweeps_impl)


def generate_graph_family(params: PriorParams, p, rng, sim_tensor=None,
                          n_sweeps=DEFAULT_FAMILY_SWEEPS, init=None) -> GraphFamily:
    """Draw a family of K graphs on p nodes by Gibbs sweeps of the
    conditional edge model.

    Each sweep resamples every (group, slot) indicator from its conditional
    Bernoulli(Phi(score)); the conditional model has no direct joint sampler.
    Initial indicators are independent Bernoulli(Phi(alpha_k)).
    """
    if n_sweeps < 1:
        raise ChainError("n_sweeps must be >= 1")
    K = params.n_groups
    E = len(edge_slots(p))
    use_prox = variant_uses_proximity(params.variant)
    use_ls = variant_uses_latent_space(params.variant)
    if init is not None:
        slots = init.slot_matrix().astype(bool)
    else:
        slots = rng.random((K, E)) < ndtr(params.alpha)[:, None]
    S = np.where(slots, 1.0, -1.0)
    if use_prox:
        sim = np.asarray(sim_tensor, dtype=float)
        if sim.shape != (K, K, params.beta.shape[0]):
            raise ChainError("proximity tensor shape mismatch")
    else:
        sim = np.zeros((K, K, 0))
    C = params.positions if use_ls else np.zeros((K, LATENT_DIM))
    _family_sweeps(S, sim, params.beta, C, params.alpha, int(n_sweeps),
                   use_prox, use_ls, rng)
    return GraphFamily.from_slot_matrix(S > 0, p)


# ---------------------------------------------------------------------------
# precisions and survey data
# ---------------------------------------------------------------------------


def precision_from_graph(adj, rng, strength=(0.3, 0.5)):
    """A precision matrix honoring ``adj`` with non-trivial partial
    correlations: random +/- magnitudes on the edges, diagonal shifted just
    past positive definiteness, then rescaled to a unit diagonal."""
    adj = gwishart.validate_adjacency(adj)
    p = adj.shape[0]
    A = np.zeros((p, p))
    iu = np.triu_indices(p, 1)
    mags = rng.uniform(strength[0], strength[1], size=len(iu[0]))
    signs = np.where(rng.random(len(iu[0])) < 0.5, -1.0, 1.0)
    vals = np.where(adj[iu], mags * signs, 0.0)
    A[iu] = vals
    A += A.T
    lam = np.linalg.eigvalsh(A).min()
    omega = A + (abs(lam) + 0.3) * np.eye(p)
    scale = np.sqrt(np.diag(omega))
    omega = omega / np.outer(scale, scale)
    return omega


def random_marginal_model(trait: TraitSpec, m, rng, link="logit", coef_scale=0.3):
    """A plausible ground-truth marginal model for one trait."""
    C = trait.n_categories
    _, _, quantile = _link_funcs(link)
    w = rng.uniform(0.5, 1.5, size=C)
    cum = np.cumsum(w)[: C - 1] / w.sum()
    thresholds = quantile(np.clip(cum, 1e-4, 1 - 1e-4))
    coefs = rng.uniform(-coef_scale, coef_scale, size=m)
    return OrdinalMarginalModel(
        trait_id=trait.trait_id,
        link=link,
        thresholds=np.asarray(thresholds, dtype=float),
        coefficients=coefs,
        covariate_names=tuple(f"x{i+1}" for i in range(m)),
        n_categories=C,
        log_likelihood=0.0,
        n_obs=0,
    )


def generate_survey(omega, models, covariates, n, missing_rate, rng):
    """Ordinal responses from the Gaussian copula with precision ``omega``.

    Draws latent rows from N(0, omega^{-1}), rescales each coordinate to unit
    marginal variance, and pushes Phi(z) through each trait's inverse
    cumulative model at that respondent's covariates.  Missing entries are
    MAR with the given rate.
    """
    if not 0.0 <= missing_rate < 1.0:
        raise DataError(f"missing rate must be in [0, 1), got {missing_rate}")
    omega = np.asarray(omega, dtype=float)
    p = omega.shape[0]
    if len(models) != p:
        raise DataError("one marginal model per trait is required")
    X = np.asarray(covariates, dtype=float)
    if X.ndim == 1:
        X = X.reshape(n, -1)
    sigma = np.linalg.inv(omega)
    L = np.linalg.cholesky(sigma)
    Z = rng.standard_normal((n, p)) @ L.T
    Z /= np.sqrt(np.diag(sigma))[None, :]
    U = ndtr(Z)
    Y = np.empty((n, p), dtype=np.int64)
    for j, model in enumerate(models):
        C = model.n_categories
        cdf, _, _ = _link_funcs(model.link)
        xb = X @ model.coefficients if model.coefficients.size else np.zeros(n)
        cum = cdf(model.thresholds[None, :] - xb[:, None])  # (n, C-1)
        Y[:, j] = 1 + (U[:, j][:, None] > cum).sum(axis=1)
    if missing_rate > 0:
        Y[rng.random((n, p)) < missing_rate] = MISSING
    return Y


# ---------------------------------------------------------------------------
# exact posterior over graphs (p <= 3)
# ---------------------------------------------------------------------------


def enumerate_posterior(Z, gw_prior: gwishart.GWishartParams, edge_priors):
    """Exact posterior over all graphs on p <= 3 nodes given latent data Z.

    Combines analytic G-Wishart marginal likelihoods (every graph on <= 3
    nodes is decomposable) with independent edge-prior probabilities.
    Returns (slot_patterns, probabilities) with patterns ordered as binary
    tuples over the lexicographic edge slots.
    """
    Z = np.asarray(Z, dtype=float)
    p = Z.shape[1]
    if p > 3:
        raise ChainError("exact enumeration is limited to p <= 3")
    E = p * (p - 1) // 2
    priors = np.asarray(edge_priors, dtype=float)
    if priors.shape != (E,):
        raise ChainError(f"edge_priors must have length {E}")
    if np.any((priors < 0) | (priors > 1)):
        raise ChainError("edge priors must lie in [0, 1]")
    post = gwishart.posterior_params(gw_prior, Z)
    patterns = list(itertools.product((0, 1), repeat=E))
    logw = np.empty(len(patterns))
    iu = np.triu_indices(p, 1)
    with np.errstate(divide="ignore"):
        lp1 = np.log(priors)
        lp0 = np.log1p(-priors)
    for g, bits in enumerate(patterns):
        bits_arr = np.asarray(bits, dtype=bool)
        adj = np.zeros((p, p), dtype=bool)
        adj[iu[0][bits_arr], iu[1][bits_arr]] = True
        adj |= adj.T
        lw = float(np.where(bits_arr, lp1, lp0).sum())
        if np.isfinite(lw):
            lw += gwishart.log_gwishart_norm_decomposable(adj, post.b, post.D)
            lw -= gwishart.log_gwishart_norm_decomposable(adj, gw_prior.b, gw_prior.D)
        logw[g] = lw
    probs = np.exp(logw - logsumexp(logw))
    probs /= probs.sum()
    return patterns, probs


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------


@dataclass
class SyntheticScenario:
    """A fully realized ground truth for simulate-and-recover studies."""

    name: str
    variant: str
    seed: int
    groups: tuple[str, ...]
    traits: tuple[TraitSpec, ...]
    covariate_names: tuple[str, ...]
    params: PriorParams
    graphs: GraphFamily
    precisions: np.ndarray                      # (K, p, p)
    marginals: dict[str, list[OrdinalMarginalModel]]
    proximity: ProximityData | None
    n_k: int
    missing_rate: float
    recipe: dict = field(default_factory=dict)

    @property
    def K(self):
        return len(self.groups)

    @property
    def p(self):
        return len(self.traits)


def _cluster_proximity(groups, n_clusters, rng, d):
    """First coordinate: same-cluster indicator; remaining coordinates:
    symmetric uniform noise (placeholders for e.g. geographic distance)."""
    K = len(groups)
    labels = np.arange(K) % n_clusters
    sim = {}
    for a in range(K):
        for b in range(a + 1, K):
            v = np.empty(d)
            v[0] = 1.0 if labels[a] == labels[b] else 0.0
            if d > 1:
                v[1:] = rng.uniform(0.0, 1.0, size=d - 1)
            sim[(groups[a], groups[b])] = v
    names = tuple(["same_cluster"] + [f"prox{i}" for i in range(1, d)])
    return ProximityData(dim=d, names=names, sim=sim), labels


def build_scenario(recipe: dict) -> SyntheticScenario:
    """Deterministically realize a scenario from a JSON-style recipe.

    Required keys: name, seed, variant, K, p, n_k.  Optional keys (defaults
    in parentheses): n_categories (4), m_covariates (2), missing_rate (0.05),
    alpha (-0.8), beta, position_scale (1.0) or positions, d (len(beta)),
    n_clusters (2), edge_strength ([0.3, 0.5]), family_sweeps (500),
    shared_edges ([]), coef_scale (0.3), link ("logit").
    """
    required = ("name", "seed", "variant", "K", "p", "n_k")
    for key in required:
        if key not in recipe:
            raise DataError(f"scenario recipe missing required key {key!r}")
    name = str(recipe["name"])
    seed = int(recipe["seed"])
    variant = str(recipe["variant"])
    K = int(recipe["K"])
    p = int(recipe["p"])
    n_k = int(recipe["n_k"])
    missing_rate = float(recipe.get("missing_rate", 0.05))
    if not 0.0 <= missing_rate < 1.0:
        raise DataError(f"missing rate must be in [0, 1), got {missing_rate}")
    link = str(recipe.get("link", "logit"))
    m = int(recipe.get("m_covariates", 2))
    ncat = recipe.get("n_categories", 4)
    if isinstance(ncat, int):
        ncat = [ncat] * p
    if len(ncat) != p:
        raise DataError("n_categories must be an int or a length-p list")

    ss = np.random.SeedSequence(seed)
    r_family, r_prec, r_marg, r_prox = (
        np.random.default_rng(s) for s in ss.spawn(4)
    )

    groups = tuple(f"g{idx:02d}" for idx in range(K))
    traits = tuple(
        TraitSpec(f"t{j+1}", int(ncat[j]), f"synthetic trait {j+1}") for j in range(p)
    )
    cov_names = tuple(f"x{i+1}" for i in range(m))

    alpha = np.asarray(recipe.get("alpha", -0.8), dtype=float)
    if alpha.ndim == 0:
        alpha = np.full(K, float(alpha))
    use_prox = variant_uses_proximity(variant)
    use_ls = variant_uses_latent_space(variant)
    beta = np.asarray(recipe.get("beta", [1.0, -0.5] if use_prox else []), dtype=float)
    d = int(recipe.get("d", beta.shape[0]))
    if use_prox and d != beta.shape[0]:
        raise DataError("d must equal len(beta)")
    positions = None
    if use_ls:
        if "positions" in recipe:
            positions = np.asarray(recipe["positions"], dtype=float)
        else:
            positions = r_prox.normal(
                scale=float(recipe.get("position_scale", 1.0)), size=(K, LATENT_DIM)
            )
    params = PriorParams(variant=variant, alpha=alpha, beta=beta, positions=positions)

    proximity = None
    sim_tensor = None
    if use_prox:
        proximity, _ = _cluster_proximity(
            groups, int(recipe.get("n_clusters", 2)), r_prox, d
        )
        sim_tensor = proximity.tensor(groups)

    family = generate_graph_family(
        params, p, r_family, sim_tensor=sim_tensor,
        n_sweeps=int(recipe.get("family_sweeps", DEFAULT_FAMILY_SWEEPS)),
    )
    adj = family.adj.copy()
    for j1, j2 in recipe.get("shared_edges", []):
        adj[:, j1, j2] = adj[:, j2, j1] = True
    family = GraphFamily(adj)

    strength = tuple(recipe.get("edge_strength", (0.3, 0.5)))
    precisions = np.stack(
        [precision_from_graph(family.adj[k], r_prec, strength) for k in range(K)]
    )

    coef_scale = float(recipe.get("coef_scale", 0.3))
    marginals = {
        g: [random_marginal_model(t, m, r_marg, link=link, coef_scale=coef_scale)
            for t in traits]
        for g in groups
    }

    return SyntheticScenario(
        name=name,
        variant=variant,
        seed=seed,
        groups=groups,
        traits=traits,
        covariate_names=cov_names,
        params=params,
        graphs=family,
        precisions=precisions,
        marginals=marginals,
        proximity=proximity,
        n_k=n_k,
        missing_rate=missing_rate,
        recipe=dict(recipe),
    )


def load_scenario(path) -> SyntheticScenario:
    with open(path, encoding="utf-8") as fh:
        return build_scenario(json.load(fh))


def realize_dataset(scenario: SyntheticScenario, rng=None) -> SurveyDataset:
    """Draw the survey data implied by a scenario's ground truth."""
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(scenario.seed).spawn(5)[-1])
    m = len(scenario.covariate_names)
    responses = {}
    covariates = {}
    for idx, g in enumerate(scenario.groups):
        X = rng.standard_normal((scenario.n_k, m))
        Y = generate_survey(
            scenario.precisions[idx],
            scenario.marginals[g],
            X,
            scenario.n_k,
            scenario.missing_rate,
            rng,
        )
        responses[g] = Y
        covariates[g] = np.hstack([np.ones((scenario.n_k, 1)), X])
    return SurveyDataset(
        groups=scenario.groups,
        traits=scenario.traits,
        responses=responses,
        covariates=covariates,
        covariate_names=("const", *scenario.covariate_names),
        respondent_ids={
            g: [f"{g}_{i}" for i in range(scenario.n_k)] for g in scenario.groups
        },
        n_dropped={g: 0 for g in scenario.groups},
    )


def truth_to_json(scenario: SyntheticScenario) -> dict:
    out = {
        "name": scenario.name,
        "variant": scenario.variant,
        "seed": scenario.seed,
        "groups": list(scenario.groups),
        "alpha": scenario.params.alpha.tolist(),
        "beta": scenario.params.beta.tolist(),
        "positions": None
        if scenario.params.positions is None
        else scenario.params.positions.tolist(),
        "graphs": {
            g: scenario.graphs.adj[i].astype(int).tolist()
            for i, g in enumerate(scenario.groups)
        },
        "precisions": {
            g: scenario.precisions[i].tolist() for i, g in enumerate(scenario.groups)
        },
    }
    return out
