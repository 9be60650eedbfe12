"""Joint Bayesian inference of group-specific Gaussian copula graphical
models tied together by a latent-space probit random-graph prior."""

from .bdmcmc import (
    ChainConfig,
    ChainState,
    PosteriorAccumulator,
    bd_jump,
    birth_death_rates,
    edge_posterior,
    run_chain,
)
from .copula_latent import gibbs_sweep_latent, initial_latent, truncated_normal_sample
from .dataset import (
    MISSING,
    DescriptiveStats,
    ProximityData,
    SurveyDataset,
    TraitSpec,
    describe,
    load_proximity,
    load_survey,
    load_trait_schema,
    write_survey,
)
from .diagnostics import (
    AlignedLatentSpace,
    DevianceTrace,
    deviance,
    dic,
    dic_from_run,
    export_summaries,
    procrustes_align,
)
from .errors import ChainError, CopnetError, DataError, FitError
from .graph_prior import (
    VARIANTS,
    GraphFamily,
    PriorParams,
    edge_prior_prob,
    edge_score,
    gibbs_update_params,
)
from .gwishart import GWishartParams, posterior_params, sample_gwishart
from .marginals import (
    CopulaInterval,
    OrdinalMarginalModel,
    copula_interval,
    cumulative_prob,
    fit_ordinal,
    standardized_coefficients,
)
from .synthesis import (
    SyntheticScenario,
    build_scenario,
    enumerate_posterior,
    generate_graph_family,
    generate_survey,
)

__version__ = "0.1.0"

__all__ = [
    "MISSING",
    "VARIANTS",
    "AlignedLatentSpace",
    "ChainConfig",
    "ChainState",
    "ChainError",
    "CopnetError",
    "CopulaInterval",
    "DataError",
    "DescriptiveStats",
    "DevianceTrace",
    "FitError",
    "GWishartParams",
    "GraphFamily",
    "OrdinalMarginalModel",
    "PosteriorAccumulator",
    "PriorParams",
    "ProximityData",
    "SurveyDataset",
    "SyntheticScenario",
    "TraitSpec",
    "bd_jump",
    "birth_death_rates",
    "build_scenario",
    "copula_interval",
    "cumulative_prob",
    "describe",
    "deviance",
    "dic",
    "dic_from_run",
    "edge_posterior",
    "edge_prior_prob",
    "edge_score",
    "enumerate_posterior",
    "export_summaries",
    "fit_ordinal",
    "generate_graph_family",
    "generate_survey",
    "gibbs_sweep_latent",
    "gibbs_update_params",
    "initial_latent",
    "load_proximity",
    "load_survey",
    "load_trait_schema",
    "posterior_params",
    "procrustes_align",
    "run_chain",
    "sample_gwishart",
    "standardized_coefficients",
    "truncated_normal_sample",
    "write_survey",
]
