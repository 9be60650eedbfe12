"""Per-group, per-trait ordinal cumulative-link regressions and the mapping
from ordinal observations to Gaussian copula intervals.

The model: F(c | x) = g^{-1}(eta_c - gamma' x) for categories c = 1..C with
strictly increasing thresholds eta_1 < ... < eta_{C-1}, F(0|x) = 0 and
F(C|x) = 1.  ``gamma`` excludes an intercept (the thresholds play that role),
so the design passed to :func:`fit_ordinal` must not contain a constant
column.  The minus sign means positive coefficients push mass toward higher
categories.

Fitting is maximum likelihood over the observed (non-missing) responses, by
BFGS on the mean negative log-likelihood with thresholds reparameterized as
(eta_1, log increments) to enforce monotonicity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import expit, ndtr, ndtri

from .dataset import MISSING, SurveyDataset
from .errors import FitError

GRAD_TOL = 1e-6
MAX_ITER = 200
PROB_CLAMP = 1e-12

LINKS = ("logit", "probit")

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _link_funcs(link):
    if link == "logit":
        def cdf(a):
            return expit(a)

        def pdf(a):
            e = expit(a)
            return e * (1.0 - e)

        def quantile(q):
            return np.log(q) - np.log1p(-q)

    elif link == "probit":
        cdf = ndtr

        def pdf(a):
            return np.exp(-0.5 * a * a) / _SQRT_2PI

        quantile = ndtri
    else:
        raise ValueError(f"unknown link {link!r}; expected one of {LINKS}")
    return cdf, pdf, quantile


@dataclass(frozen=True)
class OrdinalMarginalModel:
    trait_id: str
    link: str
    thresholds: np.ndarray       # (C-1,), strictly increasing
    coefficients: np.ndarray     # (m,), no intercept
    covariate_names: tuple[str, ...]
    n_categories: int
    log_likelihood: float
    n_obs: int

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=float)
        if t.shape != (self.n_categories - 1,):
            raise ValueError("thresholds shape inconsistent with n_categories")
        if not np.all(np.isfinite(t)) or not np.all(np.diff(t) > 0):
            raise FitError(
                f"trait {self.trait_id!r}: thresholds must be finite and strictly "
                "increasing (is some category unobserved?)"
            )
        if not np.all(np.isfinite(self.coefficients)):
            raise FitError(f"trait {self.trait_id!r}: non-finite coefficients")


@dataclass(frozen=True)
class CopulaInterval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"degenerate copula interval [{self.lo}, {self.hi}]")


def _unpack(theta, C, m):
    eta = np.empty(C - 1)
    eta[0] = theta[0]
    if C > 2:
        eta[1:] = theta[0] + np.cumsum(np.exp(theta[1 : C - 1]))
    gamma = theta[C - 1 :]
    assert gamma.shape == (m,)
    return eta, gamma


def _nll_and_grad(theta, y, X, C, cdf, pdf):
    """Mean negative log-likelihood and its gradient in the reparameterized
    coordinates (eta_1, log increments, gamma)."""
    n, m = X.shape
    eta, gamma = _unpack(theta, C, m)
    xb = X @ gamma
    a = eta[None, :] - xb[:, None]            # (n, C-1)
    G = cdf(a)
    upper = np.where(y < C, G[np.arange(n), np.minimum(y, C - 1) - 1], 1.0)
    lower = np.where(y > 1, G[np.arange(n), np.maximum(y - 1, 1) - 1], 0.0)
    p = np.clip(upper - lower, 1e-300, None)
    nll = -np.log(p).sum() / n

    dens = pdf(a)
    gu = np.where(y < C, dens[np.arange(n), np.minimum(y, C - 1) - 1], 0.0)
    gl = np.where(y > 1, dens[np.arange(n), np.maximum(y - 1, 1) - 1], 0.0)
    inv_p = 1.0 / p
    # d nll / d eta_c
    d_eta = np.zeros(C - 1)
    np.add.at(d_eta, np.minimum(y, C - 1) - 1, -np.where(y < C, gu * inv_p, 0.0))
    np.add.at(d_eta, np.maximum(y - 1, 1) - 1, np.where(y > 1, gl * inv_p, 0.0))
    d_eta /= n
    # d nll / d gamma
    d_gamma = ((gu - gl) * inv_p) @ X / n
    # chain through the reparameterization
    grad = np.empty_like(theta)
    grad[0] = d_eta.sum()
    if C > 2:
        grad[1 : C - 1] = np.exp(theta[1 : C - 1]) * d_eta[::-1].cumsum()[::-1][1:]
    grad[C - 1 :] = d_gamma
    return nll, grad


def _initial_theta(y, C, m, quantile):
    counts = np.bincount(y, minlength=C + 1)[1 : C + 1]
    cum = np.cumsum(counts) / counts.sum()
    q = np.clip(cum[: C - 1], 1e-4, 1.0 - 1e-4)
    q = np.maximum.accumulate(q)  # guard ties from clipping
    eta0 = quantile(q)
    # enforce strict increase for the log-increment start
    inc = np.maximum(np.diff(eta0), 1e-4)
    theta = np.concatenate([[eta0[0]], np.log(inc), np.zeros(m)])
    return theta


def fit_ordinal(responses, covariates, n_categories, link="logit",
                trait_id="", covariate_names=None) -> OrdinalMarginalModel:
    """Maximum-likelihood fit of the cumulative-link model.

    Missing responses (== :data:`MISSING`) are excluded from the likelihood.
    Raises :class:`FitError` on degenerate data (a single observed category,
    too few rows, a constant covariate column) or non-convergence; the error
    carries the optimizer trace.
    """
    y_all = np.asarray(responses, dtype=np.int64)
    if covariates is None:
        covariates = np.zeros((len(y_all), 0))
    X_all = np.asarray(covariates, dtype=float)
    if X_all.ndim == 1:
        X_all = X_all.reshape(-1, 1)
    if X_all.size == 0:
        X_all = X_all.reshape(len(y_all), 0)
    C = int(n_categories)
    obs = y_all != MISSING
    y = y_all[obs]
    X = X_all[obs]
    n, m = X.shape
    if covariate_names is None:
        covariate_names = tuple(f"x{i+1}" for i in range(m))
    if n == 0 or np.unique(y).size < 2:
        raise FitError(
            f"trait {trait_id!r}: needs at least two distinct observed categories"
        )
    if y.min() < 1 or y.max() > C:
        raise FitError(f"trait {trait_id!r}: categories outside 1..{C}")
    if n < m + C - 1:
        raise FitError(
            f"trait {trait_id!r}: {n} observed rows cannot identify "
            f"{m + C - 1} parameters"
        )
    if m and np.any(X.std(axis=0) == 0.0):
        raise FitError(
            f"trait {trait_id!r}: constant covariate column (the thresholds "
            "already absorb an intercept)"
        )

    cdf, pdf, quantile = _link_funcs(link)
    theta0 = _initial_theta(y, C, m, quantile)
    res = optimize.minimize(
        _nll_and_grad,
        theta0,
        args=(y, X, C, cdf, pdf),
        jac=True,
        method="BFGS",
        options={"gtol": 0.1 * GRAD_TOL, "maxiter": MAX_ITER},
    )
    grad_norm = float(np.max(np.abs(res.jac)))
    if grad_norm >= GRAD_TOL:
        # one polishing restart before giving up
        res = optimize.minimize(
            _nll_and_grad, res.x, args=(y, X, C, cdf, pdf), jac=True,
            method="BFGS", options={"gtol": 0.01 * GRAD_TOL, "maxiter": MAX_ITER},
        )
        grad_norm = float(np.max(np.abs(res.jac)))
    if not np.all(np.isfinite(res.x)) or grad_norm >= GRAD_TOL:
        raise FitError(
            f"trait {trait_id!r}: optimizer did not converge "
            f"(gradient norm {grad_norm:.3e} after {res.nit} iterations; "
            "separated or degenerate data?)",
            trace={"nit": int(res.nit), "grad_norm": grad_norm,
                   "message": str(res.message), "theta": res.x.tolist()},
        )
    eta, gamma = _unpack(res.x, C, m)
    return OrdinalMarginalModel(
        trait_id=trait_id,
        link=link,
        thresholds=eta,
        coefficients=gamma,
        covariate_names=tuple(covariate_names),
        n_categories=C,
        log_likelihood=-float(res.fun) * n,
        n_obs=n,
    )


def standardized_coefficients(model: OrdinalMarginalModel, covariate_sds):
    """Coefficient per one-SD covariate change: gamma_j * sd(x_j)."""
    sds = np.asarray(covariate_sds, dtype=float)
    if sds.shape != model.coefficients.shape:
        raise ValueError("covariate_sds shape does not match coefficients")
    if np.any(sds <= 0):
        raise ValueError("covariate SDs must be strictly positive")
    return model.coefficients * sds


def cumulative_prob(model: OrdinalMarginalModel, c, x):
    """F(c | x) for c in 0..C; 0 at c=0 and 1 at c=C by convention."""
    C = model.n_categories
    if not 0 <= c <= C:
        raise ValueError(f"category index {c} outside 0..{C}")
    x = np.asarray(x, dtype=float)
    scalar = x.ndim <= 1
    xb = x @ model.coefficients if model.coefficients.size else np.zeros(
        1 if x.ndim <= 1 else x.shape[0]
    )
    if c == 0:
        out = np.zeros_like(np.atleast_1d(xb), dtype=float)
    elif c == C:
        out = np.ones_like(np.atleast_1d(xb), dtype=float)
    else:
        cdf, _, _ = _link_funcs(model.link)
        out = np.atleast_1d(cdf(model.thresholds[c - 1] - xb))
    return float(out[0]) if scalar else out


def _z_from_prob(prob):
    """Phi^{-1} with the exact 0/1 boundaries kept infinite and interior
    values clamped away from them."""
    prob = np.asarray(prob, dtype=float)
    out = np.empty(prob.shape)
    out[prob <= 0.0] = -np.inf
    out[prob >= 1.0] = np.inf
    interior = (prob > 0.0) & (prob < 1.0)
    out[interior] = ndtri(np.clip(prob[interior], PROB_CLAMP, 1.0 - PROB_CLAMP))
    return out


def copula_interval(model: OrdinalMarginalModel, y, x) -> CopulaInterval:
    """Interval of latent Gaussian values compatible with observation ``y``.

    Missing observations map to the full real line.
    """
    if y == MISSING:
        return CopulaInterval(-np.inf, np.inf)
    if not 1 <= y <= model.n_categories:
        raise ValueError(f"category {y} outside 1..{model.n_categories}")
    lo = _z_from_prob(cumulative_prob(model, y - 1, x))
    hi = _z_from_prob(cumulative_prob(model, y, x))
    return CopulaInterval(float(lo), float(hi))


def interval_matrix(models, responses, covariates):
    """Copula intervals for a whole group.

    ``models`` is one fitted model per trait; returns (lo, hi) float arrays of
    the same shape as ``responses``.  Intervals of consecutive categories tile
    the real line exactly because both sides read the same cumulative value.
    """
    Y = np.asarray(responses, dtype=np.int64)
    X = np.asarray(covariates, dtype=float)
    n, p = Y.shape
    lo = np.empty((n, p))
    hi = np.empty((n, p))
    for j, model in enumerate(models):
        C = model.n_categories
        xb = X @ model.coefficients if model.coefficients.size else np.zeros(n)
        cdf, _, _ = _link_funcs(model.link)
        cuts = np.empty((n, C + 1))
        cuts[:, 0] = -np.inf
        cuts[:, C] = np.inf
        if C > 1:
            zmat = _z_from_prob(cdf(model.thresholds[None, :] - xb[:, None]))
            cuts[:, 1:C] = zmat
        yj = Y[:, j]
        miss = yj == MISSING
        yc = np.where(miss, 1, yj)
        rows = np.arange(n)
        lo[:, j] = np.where(miss, -np.inf, cuts[rows, yc - 1])
        hi[:, j] = np.where(miss, np.inf, cuts[rows, yc])
    return lo, hi


# ---------------------------------------------------------------------------
# fitting a whole dataset + JSON serialization
# ---------------------------------------------------------------------------


def fit_dataset_marginals(dataset: SurveyDataset, link="logit"):
    """Fit all K x p marginal models; returns {group: [model per trait]}."""
    out = {}
    for g in dataset.groups:
        X = dataset.plain_covariates(g)
        names = dataset.plain_covariate_names
        out[g] = [
            fit_ordinal(
                dataset.responses[g][:, j],
                X,
                t.n_categories,
                link=link,
                trait_id=t.trait_id,
                covariate_names=names,
            )
            for j, t in enumerate(dataset.traits)
        ]
    return out


def marginals_to_records(marginals, dataset: SurveyDataset | None = None):
    records = []
    for g, models in marginals.items():
        sds = None
        if dataset is not None:
            Xp = dataset.plain_covariates(g)
            sds = Xp.std(axis=0).tolist() if Xp.shape[1] else []
        for mod in models:
            records.append(
                {
                    "group": g,
                    "trait": mod.trait_id,
                    "link": mod.link,
                    "thresholds": mod.thresholds.tolist(),
                    "gamma": mod.coefficients.tolist(),
                    "loglik": mod.log_likelihood,
                    "n_categories": mod.n_categories,
                    "n_obs": mod.n_obs,
                    "covariate_names": list(mod.covariate_names),
                    "covariate_sds": sds,
                }
            )
    return records


def save_marginals(marginals, path, dataset=None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(marginals_to_records(marginals, dataset), fh, indent=1)
        fh.write("\n")


def load_marginals(path):
    """Returns ({group: [models]}, {group: covariate_sds or None})."""
    with open(path, encoding="utf-8") as fh:
        records = json.load(fh)
    out: dict[str, list[OrdinalMarginalModel]] = {}
    sds: dict[str, np.ndarray | None] = {}
    for r in records:
        mod = OrdinalMarginalModel(
            trait_id=r["trait"],
            link=r["link"],
            thresholds=np.asarray(r["thresholds"], dtype=float),
            coefficients=np.asarray(r["gamma"], dtype=float),
            covariate_names=tuple(r["covariate_names"]),
            n_categories=int(r["n_categories"]),
            log_likelihood=float(r["loglik"]),
            n_obs=int(r["n_obs"]),
        )
        out.setdefault(r["group"], []).append(mod)
        if r.get("covariate_sds") is not None:
            sds[r["group"]] = np.asarray(r["covariate_sds"], dtype=float)
        else:
            sds.setdefault(r["group"], None)
    return out, sds
