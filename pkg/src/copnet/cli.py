"""Command-line front end: fit, simulate, summarize, compare.

Exit codes: 0 success, 1 validation error (bad arguments or inputs), 2
runtime failure.  Human-readable progress goes to stderr; run directories
receive trace CSVs, checkpoints, a JSON-lines timing log and the summary
bundle (edges.csv, coef_standardized.csv, latent_positions.csv,
beta_draws.csv, dic.json).
"""

from __future__ import annotations

import argparse
import json
import logging
import pathlib
import sys

import numpy as np

from . import bdmcmc, diagnostics, likelihood, synthesis
from .dataset import (
    load_proximity,
    load_survey,
    load_trait_schema,
    write_proximity,
    write_survey,
    write_trait_schema,
)
from .errors import CopnetError, DataError
from .graph_prior import variant_uses_proximity
from .marginals import (
    fit_dataset_marginals,
    interval_matrix,
    load_marginals,
    save_marginals,
)

logger = logging.getLogger("copnet")

VARIANT_FLAGS = {
    "int": "intercepts",
    "int+ls": "intercepts+ls",
    "int+prox": "intercepts+prox",
    "full": "intercepts+prox+ls",
}


def _add_fit_parser(sub):
    p = sub.add_parser("fit", help="run the full inference pipeline")
    p.add_argument("--data", required=True, help="survey CSV (default format)")
    p.add_argument("--schema", required=True, help="trait schema JSON")
    p.add_argument("--proximity", default=None,
                   help="proximity CSV (required for int+prox and full)")
    p.add_argument("--variant", choices=sorted(VARIANT_FLAGS), default="int",
                   help="random-graph model variant (default: int)")
    p.add_argument("--iters", type=int, default=50000,
                   help="total MCMC iterations (default: 50000)")
    p.add_argument("--burnin", type=int, default=10000,
                   help="burn-in iterations (default: 10000)")
    p.add_argument("--thin", type=int, default=10,
                   help="recording stride for parameter/deviance draws (default: 10)")
    p.add_argument("--seed", type=int, required=True,
                   help="chain seed (required for reproducible runs)")
    p.add_argument("--threads", type=int, default=1,
                   help="parallel width across groups (default: 1)")
    p.add_argument("--link", choices=("logit", "probit"), default="logit",
                   help="marginal link function (default: logit)")
    p.add_argument("--out", required=True, help="output directory")
    return p


def _add_simulate_parser(sub):
    p = sub.add_parser("simulate", help="generate synthetic data from a scenario")
    p.add_argument("--scenario", required=True, help="scenario recipe JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None,
                   help="override the recipe seed")
    return p


def _add_summarize_parser(sub):
    p = sub.add_parser("summarize", help="regenerate the summary bundle of a run")
    p.add_argument("--run", required=True, help="a completed fit directory")
    p.add_argument("--out", required=True, help="destination directory")
    return p


def _add_compare_parser(sub):
    p = sub.add_parser("compare", help="rank completed runs by DIC")
    p.add_argument("runs", nargs="*", help="completed fit directories")
    return p


def build_parser():
    parser = argparse.ArgumentParser(
        prog="copnet",
        description="Joint inference of group-specific Gaussian copula "
        "graphical models with a latent-space random-graph prior.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_fit_parser(sub)
    _add_simulate_parser(sub)
    _add_summarize_parser(sub)
    _add_compare_parser(sub)
    return parser


def cmd_fit(args) -> int:
    variant = VARIANT_FLAGS[args.variant]
    out = pathlib.Path(args.out)
    try:
        traits = load_trait_schema(args.schema)
        dataset = load_survey(args.data, traits)
        proximity = None
        if variant_uses_proximity(variant):
            if args.proximity is None:
                print(
                    f"error: variant {args.variant!r} requires --proximity",
                    file=sys.stderr,
                )
                return 1
            proximity = load_proximity(args.proximity, dataset.groups)
        config = bdmcmc.ChainConfig(
            n_iterations=args.iters,
            burn_in=args.burnin,
            seed=args.seed,
            variant=variant,
            thin=args.thin,
            n_threads=args.threads,
        )
    except (DataError, CopnetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    try:
        out.mkdir(parents=True, exist_ok=True)
        logger.info("fitting %d x %d marginal models (%s link)",
                    dataset.n_groups, dataset.n_traits, args.link)
        marginals = fit_dataset_marginals(dataset, link=args.link)
        state_dir = out / "state"
        state_dir.mkdir(exist_ok=True)
        save_marginals(marginals, state_dir / "marginals.json", dataset)

        logger.info("running %s chain: %d iterations (burn-in %d, seed %d)",
                    variant, args.iters, args.burnin, args.seed)
        acc = bdmcmc.run_chain(
            dataset, marginals, config, proximity=proximity, out_dir=out
        )
        _write_outputs(acc, dataset, marginals, config, out)
    except CopnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def _write_outputs(acc, dataset, marginals, config, out):
    out = pathlib.Path(out)
    state_dir = out / "state"
    state_dir.mkdir(exist_ok=True)
    _save_accumulator(acc, dataset, marginals, config, state_dir / "accumulator.npz")

    aligned = None
    if acc.position_draws:
        aligned = diagnostics.procrustes_align(acc.position_draws)
    dic_value, dic_trace = (None, None)
    if len(acc.deviance_draws) >= 2:
        dic_value, dic_trace = diagnostics.dic_from_run(
            acc, dataset, marginals, seed=config.seed
        )
    diagnostics.export_summaries(
        acc, marginals, aligned, out,
        dataset=dataset, dic_value=dic_value, dic_trace=dic_trace,
        trait_ids=[t.trait_id for t in dataset.traits],
    )
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(bdmcmc.summary_dict(acc), fh, indent=1, sort_keys=True)
        fh.write("\n")
    logger.info("wrote summary bundle to %s", out)


def _save_accumulator(acc, dataset, marginals, config, path):
    payload = {
        "groups": np.array(acc.groups),
        "p": np.int64(acc.p),
        "variant": np.bytes_(acc.variant.encode()),
        "edge_time": acc.edge_time,
        "total_time": acc.total_time,
        "omega_sum": acc.omega_sum,
        "n_omega": np.int64(acc.n_omega),
        "recorded_iters": np.asarray(acc.recorded_iters, dtype=np.int64),
        "alpha_draws": np.asarray(acc.alpha_draws),
        "beta_draws": np.asarray(acc.beta_draws),
        "deviance_draws": np.asarray(acc.deviance_draws),
        "seed": np.int64(config.seed),
    }
    if acc.position_draws:
        payload["position_draws"] = np.asarray(acc.position_draws)
    # interval matrices let `summarize` recompute the DIC without raw data
    for k, g in enumerate(acc.groups):
        lo, hi = interval_matrix(
            marginals[g], dataset.responses[g], dataset.plain_covariates(g)
        )
        payload[f"lo_{k}"] = lo
        payload[f"hi_{k}"] = hi
    np.savez_compressed(path, **payload)


def cmd_simulate(args) -> int:
    try:
        with open(args.scenario, encoding="utf-8") as fh:
            recipe = json.load(fh)
        if args.seed is not None:
            recipe["seed"] = args.seed
        scenario = synthesis.build_scenario(recipe)
        dataset = synthesis.realize_dataset(scenario)
    except (DataError, CopnetError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_survey(dataset, out / "survey.csv")
    write_trait_schema(scenario.traits, out / "schema.json")
    if scenario.proximity is not None:
        write_proximity(scenario.proximity, scenario.groups, out / "proximity.csv")
    with open(out / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(synthesis.truth_to_json(scenario), fh, indent=1, sort_keys=True)
        fh.write("\n")
    logger.info("wrote synthetic data for scenario %r to %s", scenario.name, out)
    return 0


def cmd_summarize(args) -> int:
    run = pathlib.Path(args.run)
    acc_path = run / "state" / "accumulator.npz"
    marg_path = run / "state" / "marginals.json"
    if not acc_path.exists() or not marg_path.exists():
        print(f"error: {run} is not a completed fit directory", file=sys.stderr)
        return 1
    try:
        marginals, covariate_sds = load_marginals(marg_path)
        acc, intervals, seed = _load_accumulator(acc_path)
        aligned = None
        if acc.position_draws:
            aligned = diagnostics.procrustes_align(acc.position_draws)
        dic_value, dic_trace = (None, None)
        if len(acc.deviance_draws) >= 2:
            omega_hat = diagnostics.posterior_mean_precision(acc)
            d_hat = -2.0 * likelihood.copula_log_likelihood(
                omega_hat, intervals, seed=seed
            )
            rng = np.random.default_rng(seed)
            sub = diagnostics.subsample_deviance_draws(
                np.asarray(acc.deviance_draws), rng
            )
            dic_trace = diagnostics.DevianceTrace(draws=sub, d_hat=d_hat)
            dic_value = diagnostics.dic(dic_trace)
        diagnostics.export_summaries(
            acc, marginals, aligned, args.out,
            covariate_sds=covariate_sds, dic_value=dic_value, dic_trace=dic_trace,
        )
    except (CopnetError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def _load_accumulator(path):
    with np.load(path, allow_pickle=False) as data:
        groups = tuple(str(g) for g in data["groups"])
        acc = bdmcmc.PosteriorAccumulator.empty(
            groups, int(data["p"]), bytes(data["variant"]).decode()
        )
        acc.edge_time = data["edge_time"]
        acc.total_time = data["total_time"]
        acc.omega_sum = data["omega_sum"]
        acc.n_omega = int(data["n_omega"])
        acc.recorded_iters = data["recorded_iters"].tolist()
        acc.alpha_draws = list(data["alpha_draws"])
        acc.beta_draws = list(data["beta_draws"])
        acc.deviance_draws = data["deviance_draws"].tolist()
        if "position_draws" in data:
            acc.position_draws = list(data["position_draws"])
        intervals = [
            (data[f"lo_{k}"], data[f"hi_{k}"]) for k in range(len(groups))
        ]
        return acc, intervals, int(data["seed"])


def cmd_compare(args) -> int:
    if len(args.runs) < 2:
        print("error: compare needs at least two run directories", file=sys.stderr)
        return 1
    rows = []
    for run in args.runs:
        path = pathlib.Path(run) / "dic.json"
        if not path.exists():
            print(f"error: {run}: missing dic.json", file=sys.stderr)
            return 1
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("dic") is None:
            print(f"error: {run}: dic.json has no DIC value", file=sys.stderr)
            return 1
        rows.append((run, payload["variant"], float(payload["dic"])))
    rows.sort(key=lambda r: r[2])
    params = {
        "intercepts": "alpha_k",
        "intercepts+ls": "alpha_k, c_k",
        "intercepts+prox": "alpha_k, beta",
        "intercepts+prox+ls": "alpha_k, beta, c_k",
    }
    width = max(len(r[0]) for r in rows)
    print(f"{'run':<{width}}  {'variant':<20} {'parameters':<20} {'DIC':>14}")
    for idx, (run, variant, val) in enumerate(rows):
        marker = "  <- selected" if idx == 0 else ""
        print(f"{run:<{width}}  {variant:<20} {params.get(variant, ''):<20} "
              f"{val:>14.3f}{marker}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "fit": cmd_fit,
        "simulate": cmd_simulate,
        "summarize": cmd_summarize,
        "compare": cmd_compare,
    }
    try:
        return handlers[args.command](args)
    except CopnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
