"""Model comparison (DIC), latent-space post-processing and summary exports.

The deviance is -2 times the observed-data log-likelihood: each respondent's
copula rectangle probability under the group's precision and the frozen
fitted marginals (random-graph parameters do not enter; they influence the
deviance only through the posterior of the precisions).  DIC adds twice the
sample variance of the recorded deviance draws to the deviance at the
posterior-mean precision.
"""

from __future__ import annotations

import json
import pathlib
from dataclasses import dataclass

import numpy as np
from scipy.linalg import orthogonal_procrustes

from . import bdmcmc, likelihood
from .dataset import SurveyDataset
from .errors import ChainError
from .graph_prior import edge_slots
from .marginals import interval_matrix, standardized_coefficients

DIC_SUBSAMPLE = 50

BUNDLE_FILES = (
    "edges.csv",
    "coef_standardized.csv",
    "latent_positions.csv",
    "beta_draws.csv",
    "dic.json",
)


@dataclass(frozen=True)
class DevianceTrace:
    draws: np.ndarray
    d_hat: float

    def __post_init__(self):
        draws = np.asarray(self.draws, dtype=float)
        object.__setattr__(self, "draws", draws)
        if not np.all(np.isfinite(draws)) or not np.isfinite(self.d_hat):
            raise ChainError("deviance values must be finite")


@dataclass(frozen=True)
class AlignedLatentSpace:
    positions: np.ndarray        # (K, 2) mean of aligned draws
    reference_index: int
    n_draws: int


def dic(trace: DevianceTrace) -> float:
    """Deviance at the posterior mean plus twice the deviance variance."""
    if trace.draws.size < 2:
        raise ChainError("DIC needs at least two deviance draws")
    return float(trace.d_hat + 2.0 * trace.draws.var(ddof=1))


def subsample_deviance_draws(draws, rng, size=DIC_SUBSAMPLE):
    """Uniform subsample (without replacement when possible) used for Var(D)."""
    draws = np.asarray(draws, dtype=float)
    if draws.size <= size:
        return draws
    idx = np.sort(rng.choice(draws.size, size=size, replace=False))
    return draws[idx]


def _intervals_for(dataset, marginals):
    return [
        interval_matrix(marginals[g], dataset.responses[g], dataset.plain_covariates(g))
        for g in dataset.groups
    ]


def deviance(state, dataset: SurveyDataset, marginals, seed=0, rel_tol=1e-3) -> float:
    """-2 log observed-data likelihood at a chain snapshot.

    ``state`` may be a :class:`copnet.bdmcmc.ChainState` or a (K, p, p) array
    of precisions aligned with ``dataset.groups``.
    """
    omegas = getattr(state, "omegas", state)
    omegas = np.asarray(omegas, dtype=float)
    if omegas.ndim == 2:
        omegas = omegas[None, :, :]
    if omegas.shape[0] != dataset.n_groups:
        raise ChainError("one precision matrix per group is required")
    intervals = _intervals_for(dataset, marginals)
    return -2.0 * likelihood.copula_log_likelihood(
        omegas, intervals, seed=seed, rel_tol=rel_tol
    )


def nearest_spd_with_pattern(matrix, adj, eps=1e-8):
    """Project onto the symmetric matrices with ``adj``'s zero pattern, then
    shift the diagonal just enough to restore positive definiteness."""
    m = 0.5 * (matrix + matrix.T)
    mask = ~adj & ~np.eye(adj.shape[0], dtype=bool)
    m = m.copy()
    m[mask] = 0.0
    lam = np.linalg.eigvalsh(m).min()
    if lam <= eps:
        m += (eps - lam) * np.eye(m.shape[0])
    return m


def posterior_mean_precision(accumulator: bdmcmc.PosteriorAccumulator,
                             edge_threshold=0.5):
    """Posterior-mean precisions projected to SPD with the modal graph's
    zero pattern (the plug-in estimate for the DIC deviance)."""
    probs = bdmcmc.edge_posterior(accumulator)
    mean = accumulator.posterior_mean_omega()
    out = np.empty_like(mean)
    for k in range(mean.shape[0]):
        modal = probs[k] > edge_threshold
        np.fill_diagonal(modal, False)
        out[k] = nearest_spd_with_pattern(mean[k], modal)
    return out


def dic_from_run(accumulator, dataset, marginals, seed=0, rel_tol=1e-3,
                 subsample_seed=None):
    """DIC of a finished run: plug-in deviance at the projected posterior-mean
    precisions, variance over (up to) 50 uniformly subsampled deviance draws."""
    draws = np.asarray(accumulator.deviance_draws, dtype=float)
    if draws.size < 2:
        raise ChainError("run recorded fewer than two deviance draws")
    omega_hat = posterior_mean_precision(accumulator)
    d_hat = deviance(omega_hat, dataset, marginals, seed=seed, rel_tol=rel_tol)
    rng = np.random.default_rng(seed if subsample_seed is None else subsample_seed)
    sub = subsample_deviance_draws(draws, rng)
    trace = DevianceTrace(draws=sub, d_hat=d_hat)
    return dic(trace), trace


# ---------------------------------------------------------------------------
# latent space alignment
# ---------------------------------------------------------------------------


def procrustes_align(samples) -> AlignedLatentSpace:
    """Align position draws to the first draw by orthogonal rotation
    (reflections allowed) and return the mean of the aligned draws.

    Inner products are untouched: Q orthogonal means (CQ)(CQ)' = CC'.
    """
    samples = [np.asarray(s, dtype=float) for s in samples]
    if not samples:
        raise ChainError("no latent position draws to align")
    ref = samples[0]
    if not np.any(ref):
        raise ChainError("degenerate (all-zero) reference draw")
    K = ref.shape[0]
    acc = np.zeros_like(ref)
    for s in samples:
        if s.shape != ref.shape:
            raise ChainError("position draws must share a common shape")
        Q, _ = orthogonal_procrustes(s, ref)
        acc += s @ Q
    return AlignedLatentSpace(
        positions=acc / len(samples), reference_index=0, n_draws=len(samples)
    )


# ---------------------------------------------------------------------------
# summary bundle
# ---------------------------------------------------------------------------


def _fmt(x):
    return repr(float(x))


def export_summaries(accumulator, marginals, aligned, out_dir,
                     dataset: SurveyDataset | None = None,
                     covariate_sds: dict | None = None,
                     dic_value=None, dic_trace=None, trait_ids=None):
    """Write the summary bundle: edge probabilities, standardized marginal
    coefficients, latent positions, beta draws, and DIC.

    Standardized coefficients need per-group covariate SDs, taken from
    ``dataset`` or supplied directly via ``covariate_sds``.
    """
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    groups = accumulator.groups
    p = accumulator.p
    if trait_ids is None:
        trait_ids = [m.trait_id for m in marginals[groups[0]]]
    slots = edge_slots(p)
    probs = bdmcmc.edge_posterior(accumulator)

    with open(out / "edges.csv", "w", encoding="utf-8") as fh:
        labels = [f"{trait_ids[i]}-{trait_ids[j]}" for i, j in slots]
        fh.write(",".join(["group"] + labels) + "\n")
        for k, g in enumerate(groups):
            vals = [_fmt(probs[k, i, j]) for i, j in slots]
            fh.write(",".join([g] + vals) + "\n")

    with open(out / "coef_standardized.csv", "w", encoding="utf-8") as fh:
        names = marginals[groups[0]][0].covariate_names
        fh.write(",".join(["group", "trait", *names]) + "\n")
        for g in groups:
            if covariate_sds is not None and covariate_sds.get(g) is not None:
                sds = np.asarray(covariate_sds[g], dtype=float)
            elif dataset is not None:
                X = dataset.plain_covariates(g)
                sds = X.std(axis=0) if X.shape[1] else np.zeros(0)
            else:
                sds = None
            for model in marginals[g]:
                if model.coefficients.size == 0:
                    coefs = []
                elif sds is None or np.size(sds) != model.coefficients.size:
                    raise ChainError(
                        "covariate SDs required to standardize coefficients"
                    )
                else:
                    coefs = standardized_coefficients(model, sds).tolist()
                fh.write(",".join([g, model.trait_id, *[_fmt(c) for c in coefs]]) + "\n")

    with open(out / "latent_positions.csv", "w", encoding="utf-8") as fh:
        fh.write("group,c1,c2\n")
        if aligned is not None:
            for k, g in enumerate(groups):
                fh.write(f"{g},{_fmt(aligned.positions[k, 0])},"
                         f"{_fmt(aligned.positions[k, 1])}\n")

    with open(out / "beta_draws.csv", "w", encoding="utf-8") as fh:
        d = (np.asarray(accumulator.beta_draws[0]).shape[0]
             if accumulator.beta_draws else 0)
        fh.write(",".join(["iteration"] + [f"beta_{i+1}" for i in range(d)]) + "\n")
        if d:
            for it, b in zip(accumulator.recorded_iters, accumulator.beta_draws):
                fh.write(",".join([str(it)] + [_fmt(v) for v in b]) + "\n")

    payload = {"variant": accumulator.variant}
    if dic_value is not None:
        payload.update(
            dic=dic_value,
            d_hat=dic_trace.d_hat if dic_trace is not None else None,
            var_d=float(np.asarray(dic_trace.draws).var(ddof=1))
            if dic_trace is not None and dic_trace.draws.size > 1 else None,
            n_draws=int(dic_trace.draws.size) if dic_trace is not None else None,
        )
    with open(out / "dic.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return out
