"""Birth-death MCMC over graphs, orchestrating the full five-step chain.

Each outer iteration: (1) one Gibbs scan of the random-graph parameters,
then per group (2) a truncated-normal sweep of the latent data given the
current precision, (3) a G-Wishart redraw of the precision given graph and
latent data, (4) one birth-death jump of the graph with an exponential
holding time, and (5) a precision redraw under the post-jump graph so the
zero pattern always matches the current graph.  Post burn-in, edge presence
is accumulated weighted by the holding times and parameter/deviance draws
are recorded at the thinning stride.

Birth/death rates are posterior ratios of one-edge-apart graphs with the
precision integrated out: the G-Wishart normalizing-constant ratio of
posterior against prior parameters times the prior odds of the edge.  Rates
are Barker-normalized (sigmoid of the log ratio), which satisfies detailed
balance exactly; on graphs small enough to enumerate, the chain's
time-weighted occupancy reproduces the exact posterior.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import kernels, likelihood
from .copula_latent import gibbs_sweep_latent, initial_latent
from .dataset import ProximityData, SurveyDataset
from .errors import ChainError
from .graph_prior import (
    GraphFamily,
    PriorParams,
    edge_prior_probs_all,
    edge_slots,
    gibbs_update_params,
    initial_params,
    variant_uses_latent_space,
    variant_uses_proximity,
)
from .gwishart import (
    GWishartParams,
    default_prior,
    log_norm_ratio_one_edge,
    posterior_params,
    sample_gwishart,
    validate_adjacency,
    validate_precision,
)
from .marginals import interval_matrix

logger = logging.getLogger(__name__)

RATE_FLOOR = 1e-12
RATE_CAP = 1e12
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ChainConfig:
    n_iterations: int
    burn_in: int
    seed: int
    variant: str = "intercepts"
    thin: int = 10
    gwishart_inner: int = 20
    gwishart_b: float = 3.0
    n_threads: int = 1
    checkpoint_every: int = 10000
    record_deviance: bool = True
    deviance_rel_tol: float = 1e-3

    def __post_init__(self):
        if self.n_iterations < 0 or self.burn_in < 0:
            raise ChainError("iteration counts must be nonnegative")
        if self.burn_in > self.n_iterations:
            raise ChainError("burn-in cannot exceed the iteration count")
        if self.thin < 1:
            raise ChainError("thinning stride must be >= 1")
        if self.n_threads < 1:
            raise ChainError("thread width must be >= 1")


@dataclass
class ChainState:
    iteration: int
    family: GraphFamily
    omegas: np.ndarray            # (K, p, p)
    params: PriorParams
    latents: list[np.ndarray]     # per group (n_k, p)


@dataclass
class PosteriorAccumulator:
    """Waiting-time-weighted edge frequencies plus recorded draws."""

    groups: tuple[str, ...]
    p: int
    variant: str
    edge_time: np.ndarray         # (K, p, p)
    total_time: np.ndarray        # (K,)
    omega_sum: np.ndarray         # (K, p, p)
    n_omega: int = 0
    recorded_iters: list[int] = field(default_factory=list)
    alpha_draws: list[np.ndarray] = field(default_factory=list)
    beta_draws: list[np.ndarray] = field(default_factory=list)
    position_draws: list[np.ndarray] = field(default_factory=list)
    deviance_draws: list[float] = field(default_factory=list)
    final_state: ChainState | None = None

    @classmethod
    def empty(cls, groups, p, variant):
        K = len(groups)
        return cls(
            groups=tuple(groups),
            p=p,
            variant=variant,
            edge_time=np.zeros((K, p, p)),
            total_time=np.zeros(K),
            omega_sum=np.zeros((K, p, p)),
        )

    def posterior_mean_omega(self):
        if self.n_omega == 0:
            raise ChainError("empty accumulator: no post-burn-in iterations")
        return self.omega_sum / self.n_omega


def edge_posterior(accumulator: PosteriorAccumulator):
    """Per-group edge-probability matrices (holding-time weighted)."""
    if np.any(accumulator.total_time <= 0):
        raise ChainError("empty accumulator: no holding time accumulated")
    probs = accumulator.edge_time / accumulator.total_time[:, None, None]
    for k in range(probs.shape[0]):
        np.fill_diagonal(probs[k], 0.0)
    return np.clip(probs, 0.0, 1.0)


# ---------------------------------------------------------------------------
# birth-death rates
# ---------------------------------------------------------------------------


def birth_death_rates(adj, omega, Z, edge_prior_probs, gw_prior: GWishartParams,
                      post: GWishartParams | None = None):
    """Rates for every edge slot of one group's graph.

    For a non-edge the birth rate is the Barker function of the log posterior
    ratio of (G+e) against G given Z (normalizing-constant ratios times prior
    odds); for an edge the death rate uses the reciprocal ratio.  Returns
    (rates, is_edge) over the lexicographic slots.  ``omega`` is only
    validated against the graph (the ratio integrates the precision out);
    ``post`` may carry the precomputed posterior parameters for Z.
    """
    adj = validate_adjacency(adj)
    if omega is not None:
        validate_precision(omega, adj, tol=0.0)
    if post is None:
        post = posterior_params(gw_prior, np.asarray(Z, dtype=float))
    slots = edge_slots(adj.shape[0])
    pi = np.clip(np.asarray(edge_prior_probs, dtype=float), 1e-300, 1.0 - 1e-16)
    if pi.shape != (len(slots),):
        raise ChainError(f"edge prior probabilities must have length {len(slots)}")
    log_odds = np.log(pi) - np.log1p(-pi)
    si = np.array([s[0] for s in slots], dtype=np.int64)
    sj = np.array([s[1] for s in slots], dtype=np.int64)
    deltas = kernels.bd_log_ratios(
        adj, si, sj, float(post.b), np.ascontiguousarray(post.D),
        float(gw_prior.b), np.ascontiguousarray(gw_prior.D),
        gw_prior.identity_scale,
    )
    log_ratio = deltas + log_odds
    bad = np.isnan(log_ratio)
    if np.any(bad):
        logger.warning("birth/death log ratio overflow at %d slots; clamped",
                       int(bad.sum()))
        log_ratio[bad] = 0.0
    is_edge = adj[si, sj]
    rates = expit(np.where(is_edge, -log_ratio, log_ratio))
    rates = np.clip(rates, RATE_FLOOR, RATE_CAP)
    return rates, is_edge


def bd_jump(rates, rng):
    """Pick the slot to toggle and the exponential holding time."""
    rates = np.asarray(rates, dtype=float)
    if rates.size == 0 or np.any(rates < 0) or not np.all(np.isfinite(rates)):
        raise ChainError("rates must be finite and nonnegative")
    total = rates.sum()
    if total <= 0:
        raise ChainError("all birth/death rates are zero")
    holding = -np.log1p(-rng.random()) / total
    target = rng.random() * total
    cum = np.cumsum(rates)
    slot = int(np.searchsorted(cum, target, side="right"))
    slot = min(slot, rates.size - 1)
    return slot, float(holding)


def graph_chain_occupancy(Z, gw_prior, edge_prior_probs, n_jumps, rng, init_adj=None):
    """Run the pure graph birth-death chain at fixed latent data.

    Diagnostic utility for oracle comparisons: returns a dict mapping edge
    slot bit-patterns to their time-weighted occupancy fractions.
    """
    Z = np.asarray(Z, dtype=float)
    p = Z.shape[1]
    slots = edge_slots(p)
    adj = (
        np.zeros((p, p), dtype=bool) if init_adj is None else init_adj.astype(bool).copy()
    )
    post = posterior_params(gw_prior, Z)
    occ: dict[tuple, float] = {}
    total = 0.0
    for _ in range(n_jumps):
        rates, _ = birth_death_rates(adj, None, Z, edge_prior_probs, gw_prior, post=post)
        slot, holding = bd_jump(rates, rng)
        key = tuple(int(adj[i, j]) for i, j in slots)
        occ[key] = occ.get(key, 0.0) + holding
        total += holding
        i, j = slots[slot]
        adj[i, j] = adj[j, i] = not adj[i, j]
    return {k: v / total for k, v in occ.items()}


# ---------------------------------------------------------------------------
# the full chain
# ---------------------------------------------------------------------------


def _sim_tensor_for(dataset, proximity, variant):
    if not variant_uses_proximity(variant):
        return None
    if proximity is None:
        raise ChainError(f"variant {variant!r} requires proximity data")
    if isinstance(proximity, ProximityData):
        return proximity.tensor(dataset.groups)
    return np.asarray(proximity, dtype=float)


class _TraceWriter:
    """Streams parameter and deviance draws to CSV files.

    On resume the files are opened in append mode, continuing from the
    checkpointed iteration.
    """

    def __init__(self, out_dir, groups, variant, d, use_ls, append=False):
        import pathlib

        self.dir = pathlib.Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        mode = "a" if append else "w"
        cols = ["iteration", "variant"]
        cols += [f"alpha_{g}" for g in groups]
        cols += [f"beta_{i+1}" for i in range(d)]
        if use_ls:
            for g in groups:
                cols += [f"c_{g}_1", f"c_{g}_2"]
        self._params = open(self.dir / "trace_params.csv", mode, encoding="utf-8")
        self._dev = open(self.dir / "trace_deviance.csv", mode, encoding="utf-8")
        self._log = open(self.dir / "run_log.jsonl", mode, encoding="utf-8")
        if not append:
            self._params.write(",".join(cols) + "\n")
            self._dev.write("iteration,deviance\n")

    def params_row(self, iteration, params: PriorParams):
        vals = [str(iteration), params.variant]
        vals += [repr(v) for v in params.alpha.tolist()]
        vals += [repr(v) for v in params.beta.tolist()]
        if params.positions is not None:
            vals += [repr(v) for v in params.positions.ravel().tolist()]
        self._params.write(",".join(vals) + "\n")

    def deviance_row(self, iteration, deviance):
        self._dev.write(f"{iteration},{deviance!r}\n")

    def log_iteration(self, iteration, seconds):
        self._log.write(json.dumps({"iteration": iteration, "seconds": seconds}) + "\n")

    def close(self):
        for fh in (self._params, self._dev, self._log):
            fh.flush()
            fh.close()


def run_chain(
    dataset: SurveyDataset,
    marginals,
    config: ChainConfig,
    proximity=None,
    out_dir=None,
    resume_from=None,
) -> PosteriorAccumulator:
    """Run the five-step chain; returns the posterior accumulator.

    Bit-reproducible for a fixed (seed, config, inputs): every group owns an
    independent child RNG stream, so the result does not depend on the
    thread schedule.
    """
    groups = dataset.groups
    K = dataset.n_groups
    p = dataset.n_traits
    sim_tensor = _sim_tensor_for(dataset, proximity, config.variant)
    for g in groups:
        if g not in marginals or len(marginals[g]) != p:
            raise ChainError(f"marginals missing for group {g!r}")

    intervals = [
        interval_matrix(marginals[g], dataset.responses[g], dataset.plain_covariates(g))
        for g in groups
    ]
    gw_prior = default_prior(p, b=config.gwishart_b)

    ss = np.random.SeedSequence(config.seed)
    children = ss.spawn(K + 1)
    rng_global = np.random.default_rng(children[0])
    rng_groups = [np.random.default_rng(c) for c in children[1:]]

    acc = PosteriorAccumulator.empty(groups, p, config.variant)
    if resume_from is not None:
        state, acc, rng_global, rng_groups, start_iter = load_checkpoint(
            resume_from, config, dataset
        )
        latents = state.latents
        family_adj = state.family.adj.copy()
        omegas = state.omegas.copy()
        params = state.params
    else:
        start_iter = 0
        latents = [initial_latent(lo, hi) for lo, hi in intervals]
        family_adj = np.zeros((K, p, p), dtype=bool)
        params = initial_params(
            GraphFamily(family_adj), sim_tensor, config.variant, rng_global
        )
        omegas = np.stack(
            [
                sample_gwishart(
                    family_adj[k],
                    posterior_params(gw_prior, latents[k]),
                    rng_groups[k],
                    n_inner=max(config.gwishart_inner, 20),
                )
                for k in range(K)
            ]
        )

    slots = edge_slots(p)
    writer = _TraceWriter(
        out_dir, groups, config.variant,
        params.beta.shape[0], variant_uses_latent_space(config.variant),
        append=resume_from is not None,
    ) if out_dir is not None else None

    def group_step(k, prior_probs_k):
        rng_k = rng_groups[k]
        lo, hi = intervals[k]
        gibbs_sweep_latent(latents[k], omegas[k], lo, hi, rng_k)
        post_k = posterior_params(gw_prior, latents[k])
        omegas[k] = sample_gwishart(
            family_adj[k], post_k, rng_k,
            n_inner=config.gwishart_inner, warm_start=omegas[k],
        )
        rates, _ = birth_death_rates(
            family_adj[k], omegas[k], latents[k], prior_probs_k, gw_prior, post=post_k
        )
        slot, holding = bd_jump(rates, rng_k)
        i, j = slots[slot]
        return slot, holding, (i, j), post_k

    executor = None
    if config.n_threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        executor = ThreadPoolExecutor(max_workers=config.n_threads)
    try:
        for t in range(start_iter, config.n_iterations):
            t0 = time.perf_counter()
            params = gibbs_update_params(
                GraphFamily(family_adj), params, sim_tensor, rng_global
            )
            prior_probs = edge_prior_probs_all(
                GraphFamily(family_adj), params, sim_tensor
            )
            if executor is not None:
                results = list(
                    executor.map(lambda k: group_step(k, prior_probs[k]), range(K))
                )
            else:
                results = [group_step(k, prior_probs[k]) for k in range(K)]
            for k, (slot, holding, (i, j), post_k) in enumerate(results):
                if t >= config.burn_in:
                    acc.edge_time[k] += holding * family_adj[k]
                    acc.total_time[k] += holding
                family_adj[k, i, j] = family_adj[k, j, i] = not family_adj[k, i, j]
                omegas[k] = sample_gwishart(
                    family_adj[k], post_k, rng_groups[k],
                    n_inner=config.gwishart_inner, warm_start=omegas[k],
                )
            if t >= config.burn_in:
                acc.omega_sum += omegas
                acc.n_omega += 1
                if (t - config.burn_in) % config.thin == 0:
                    acc.recorded_iters.append(t)
                    acc.alpha_draws.append(params.alpha.copy())
                    acc.beta_draws.append(params.beta.copy())
                    if params.positions is not None:
                        acc.position_draws.append(params.positions.copy())
                    if config.record_deviance:
                        dev = -2.0 * likelihood.copula_log_likelihood(
                            omegas, intervals, seed=config.seed,
                            rel_tol=config.deviance_rel_tol,
                        )
                        acc.deviance_draws.append(dev)
                        if writer:
                            writer.deviance_row(t, dev)
                    if writer:
                        writer.params_row(t, params)
            if writer:
                writer.log_iteration(t, time.perf_counter() - t0)
            if (
                out_dir is not None
                and config.checkpoint_every > 0
                and (t + 1) % config.checkpoint_every == 0
            ):
                save_checkpoint(
                    _ckpt_path(out_dir, t + 1),
                    ChainState(t + 1, GraphFamily(family_adj.copy()), omegas.copy(),
                               params, [z.copy() for z in latents]),
                    acc, rng_global, rng_groups, config,
                )
    finally:
        if executor is not None:
            executor.shutdown()
        if writer:
            writer.close()

    acc.final_state = ChainState(
        config.n_iterations, GraphFamily(family_adj.copy()), omegas.copy(), params,
        [z.copy() for z in latents],
    )
    for k in range(K):
        validate_precision(omegas[k], family_adj[k])
    return acc


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def _ckpt_path(out_dir, iteration):
    import pathlib

    d = pathlib.Path(out_dir) / "checkpoints"
    d.mkdir(parents=True, exist_ok=True)
    return d / f"ckpt_{iteration:09d}.npz"


def save_checkpoint(path, state: ChainState, acc: PosteriorAccumulator,
                    rng_global, rng_groups, config: ChainConfig):
    payload = {
        "version": np.int64(CHECKPOINT_VERSION),
        "iteration": np.int64(state.iteration),
        "adj": state.family.adj.astype(np.uint8),
        "omegas": state.omegas,
        "alpha": state.params.alpha,
        "beta": state.params.beta,
        "variant": np.bytes_(state.params.variant.encode()),
        "edge_time": acc.edge_time,
        "total_time": acc.total_time,
        "omega_sum": acc.omega_sum,
        "n_omega": np.int64(acc.n_omega),
        "recorded_iters": np.asarray(acc.recorded_iters, dtype=np.int64),
        "alpha_draws": np.asarray(acc.alpha_draws),
        "beta_draws": np.asarray(acc.beta_draws),
        "deviance_draws": np.asarray(acc.deviance_draws),
        "rng_global": np.bytes_(json.dumps(rng_global.bit_generator.state).encode()),
        "config": np.bytes_(json.dumps(
            {k: getattr(config, k) for k in (
                "n_iterations", "burn_in", "seed", "variant", "thin",
                "gwishart_inner", "gwishart_b", "record_deviance",
            )}).encode()),
    }
    if state.params.positions is not None:
        payload["positions"] = state.params.positions
        payload["position_draws"] = np.asarray(acc.position_draws)
    for k, z in enumerate(state.latents):
        payload[f"latent_{k}"] = z
    for k, rng in enumerate(rng_groups):
        payload[f"rng_group_{k}"] = np.bytes_(
            json.dumps(rng.bit_generator.state).encode()
        )
    np.savez_compressed(path, **payload)


def _rng_from_state(blob):
    rng = np.random.default_rng(0)
    rng.bit_generator.state = json.loads(bytes(blob).decode())
    return rng


def load_checkpoint(path, config: ChainConfig, dataset: SurveyDataset):
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ChainError(f"unsupported checkpoint version {version}")
        stored = json.loads(bytes(data["config"]).decode())
        for key, val in stored.items():
            if getattr(config, key) != val:
                raise ChainError(
                    f"checkpoint config mismatch on {key!r}: {val} != "
                    f"{getattr(config, key)}"
                )
        K = dataset.n_groups
        variant = bytes(data["variant"]).decode()
        positions = data["positions"] if "positions" in data else None
        params = PriorParams(
            variant=variant, alpha=data["alpha"], beta=data["beta"],
            positions=positions,
        )
        state = ChainState(
            iteration=int(data["iteration"]),
            family=GraphFamily(data["adj"].astype(bool)),
            omegas=data["omegas"],
            params=params,
            latents=[data[f"latent_{k}"] for k in range(K)],
        )
        acc = PosteriorAccumulator.empty(dataset.groups, dataset.n_traits, variant)
        acc.edge_time = data["edge_time"]
        acc.total_time = data["total_time"]
        acc.omega_sum = data["omega_sum"]
        acc.n_omega = int(data["n_omega"])
        acc.recorded_iters = data["recorded_iters"].tolist()
        acc.alpha_draws = [a for a in data["alpha_draws"]]
        acc.beta_draws = [b for b in data["beta_draws"]]
        if "position_draws" in data:
            acc.position_draws = [c for c in data["position_draws"]]
        acc.deviance_draws = data["deviance_draws"].tolist()
        rng_global = _rng_from_state(data["rng_global"])
        rng_groups = [_rng_from_state(data[f"rng_group_{k}"]) for k in range(K)]
        return state, acc, rng_global, rng_groups, int(data["iteration"])


def summary_dict(acc: PosteriorAccumulator):
    """Per-group edge-probability matrices and parameter posterior moments."""
    probs = edge_posterior(acc)
    out = {
        "variant": acc.variant,
        "groups": list(acc.groups),
        "edge_probabilities": {
            g: probs[k].tolist() for k, g in enumerate(acc.groups)
        },
    }
    if acc.alpha_draws:
        alpha = np.asarray(acc.alpha_draws)
        out["alpha_mean"] = alpha.mean(axis=0).tolist()
        out["alpha_sd"] = alpha.std(axis=0, ddof=1).tolist() if alpha.shape[0] > 1 else None
    if acc.beta_draws and np.asarray(acc.beta_draws).size:
        beta = np.asarray(acc.beta_draws)
        out["beta_mean"] = beta.mean(axis=0).tolist()
        out["beta_sd"] = beta.std(axis=0, ddof=1).tolist() if beta.shape[0] > 1 else None
    if acc.position_draws:
        pos = np.asarray(acc.position_draws)
        out["position_mean"] = pos.mean(axis=0).tolist()
    return out
