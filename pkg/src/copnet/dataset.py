"""Survey data ingestion: ordinal responses, respondent covariates and
pairwise group proximity measures.

File formats
------------
Survey CSV (wide), UTF-8, comma separated::

    group,respondent_id,<cov_1..cov_m>,<trait_1..trait_p>

one row per respondent, empty field = missing response.  Rows with a missing
*covariate* are dropped (and counted); missing responses are retained and
encoded as :data:`MISSING`.

Proximity CSV::

    k1,k2,<name_1..name_d>

one row per unordered group pair (duplicates must agree within 1e-9).

Trait schema JSON: a list of ``{"trait_id", "n_categories", "description"}``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

MISSING = -1

CONST_NAME = "const"


@dataclass(frozen=True)
class TraitSpec:
    trait_id: str
    n_categories: int
    description: str = ""

    def __post_init__(self):
        if self.n_categories < 2:
            raise DataError(
                f"trait {self.trait_id!r}: n_categories must be >= 2, "
                f"got {self.n_categories}"
            )


def load_trait_schema(path) -> list[TraitSpec]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list) or not raw:
        raise DataError(f"{path}: trait schema must be a non-empty JSON list")
    traits = [
        TraitSpec(str(r["trait_id"]), int(r["n_categories"]), str(r.get("description", "")))
        for r in raw
    ]
    ids = [t.trait_id for t in traits]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate trait ids in schema")
    return traits


def write_trait_schema(traits, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            [
                {
                    "trait_id": t.trait_id,
                    "n_categories": t.n_categories,
                    "description": t.description,
                }
                for t in traits
            ],
            fh,
            indent=2,
        )
        fh.write("\n")


@dataclass
class SurveyDataset:
    """Per-group ordinal response matrices with covariates.

    ``responses[k]`` is an (n_k, p) int array with entries in 1..C_j or
    :data:`MISSING`; ``covariates[k]`` is an (n_k, m) float array whose column
    0 is the constant 1.
    """

    groups: tuple[str, ...]
    traits: tuple[TraitSpec, ...]
    responses: dict[str, np.ndarray]
    covariates: dict[str, np.ndarray]
    covariate_names: tuple[str, ...]
    respondent_ids: dict[str, list[str]] = field(default_factory=dict)
    n_dropped: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.covariate_names and self.covariate_names[0] != CONST_NAME:
            raise DataError("covariate column 0 must be the constant term")
        for k in self.groups:
            y = self.responses[k]
            x = self.covariates[k]
            if y.shape[0] < 1:
                raise DataError(f"group {k!r}: needs at least one respondent")
            if y.shape != (x.shape[0], len(self.traits)):
                raise DataError(f"group {k!r}: responses/covariates shape mismatch")
            for j, t in enumerate(self.traits):
                col = y[:, j]
                obs = col[col != MISSING]
                if obs.size and (obs.min() < 1 or obs.max() > t.n_categories):
                    raise DataError(
                        f"group {k!r}: trait {t.trait_id!r} has categories outside "
                        f"1..{t.n_categories}"
                    )

    @property
    def n_groups(self):
        return len(self.groups)

    @property
    def n_traits(self):
        return len(self.traits)

    def n_respondents(self, group):
        return self.responses[group].shape[0]

    def plain_covariates(self, group):
        """Covariates without the constant column (what the marginals fit on)."""
        return self.covariates[group][:, 1:]

    @property
    def plain_covariate_names(self):
        return self.covariate_names[1:]


@dataclass(frozen=True)
class ProximityData:
    """Symmetric pairwise proximity vectors, keyed on unordered group pairs."""

    dim: int
    names: tuple[str, ...]
    sim: dict[tuple[str, str], np.ndarray]

    def get(self, k1, k2):
        return self.sim[_pair_key(k1, k2)]

    def tensor(self, groups):
        """(K, K, d) array with zero diagonal."""
        K = len(groups)
        out = np.zeros((K, K, self.dim))
        for a in range(K):
            for b in range(a + 1, K):
                v = self.get(groups[a], groups[b])
                out[a, b] = v
                out[b, a] = v
        return out


@dataclass(frozen=True)
class DescriptiveStats:
    groups: tuple[str, ...]
    trait_ids: tuple[str, ...]
    group_mean: np.ndarray      # (K, p), NaN where no observations
    group_missing: np.ndarray   # (K, p)
    overall_mean: np.ndarray    # (p,)
    overall_missing: np.ndarray
    mean_min: np.ndarray        # (p,) across groups
    mean_max: np.ndarray
    missing_min: np.ndarray
    missing_max: np.ndarray


def _pair_key(k1, k2):
    return (k1, k2) if k1 <= k2 else (k2, k1)


def _parse_float(text, what, row_no):
    try:
        return float(text)
    except ValueError:
        raise DataError(f"row {row_no}: {what}: not a number: {text!r}") from None


def load_survey(path, traits, covariate_names=None, groups=None) -> SurveyDataset:
    """Read a wide survey CSV against a trait schema.

    ``covariate_names`` (without the constant) may be supplied to validate the
    header; otherwise covariate columns are whatever sits between
    ``respondent_id`` and the first trait column.  ``groups``, when given,
    restricts the accepted group ids.
    """
    traits = tuple(traits)
    trait_ids = [t.trait_id for t in traits]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header[:2] != ["group", "respondent_id"]:
            raise DataError(f"{path}: header must start with group,respondent_id")
        body = header[2:]
        if body[-len(trait_ids):] != trait_ids:
            raise DataError(
                f"{path}: trailing columns {body[-len(trait_ids):]} do not match "
                f"schema traits {trait_ids}"
            )
        covs = body[: len(body) - len(trait_ids)]
        if covariate_names is not None and list(covariate_names) != covs:
            raise DataError(
                f"{path}: covariate columns {covs} do not match expected "
                f"{list(covariate_names)}"
            )

        resp: dict[str, list] = {}
        xs: dict[str, list] = {}
        ids: dict[str, list] = {}
        dropped: dict[str, int] = {}
        order: list[str] = []
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {row_no}: expected {len(header)} fields")
            g = row[0]
            if groups is not None and g not in groups:
                raise DataError(f"{path}: row {row_no}: unknown group id {g!r}")
            cov_raw = row[2 : 2 + len(covs)]
            if any(c.strip() == "" for c in cov_raw):
                dropped[g] = dropped.get(g, 0) + 1
                continue
            x = [1.0] + [_parse_float(c, f"covariate {covs[i]!r}", row_no)
                         for i, c in enumerate(cov_raw)]
            y = []
            for j, cell in enumerate(row[2 + len(covs):]):
                cell = cell.strip()
                if cell == "":
                    y.append(MISSING)
                    continue
                try:
                    v = int(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: row {row_no}: trait {trait_ids[j]!r}: "
                        f"not an integer: {cell!r}"
                    ) from None
                if not 1 <= v <= traits[j].n_categories:
                    raise DataError(
                        f"{path}: row {row_no}: trait {trait_ids[j]!r}: category {v} "
                        f"outside 1..{traits[j].n_categories}"
                    )
                y.append(v)
            if g not in resp:
                resp[g] = []
                xs[g] = []
                ids[g] = []
                order.append(g)
            resp[g].append(y)
            xs[g].append(x)
            ids[g].append(row[1])

    if not order:
        raise DataError(f"{path}: no data rows")
    for g, n in dropped.items():
        logger.info("group %s: dropped %d rows with missing covariates", g, n)
    return SurveyDataset(
        groups=tuple(order),
        traits=traits,
        responses={g: np.array(resp[g], dtype=np.int64) for g in order},
        covariates={g: np.array(xs[g], dtype=float) for g in order},
        covariate_names=(CONST_NAME, *covs),
        respondent_ids={g: ids[g] for g in order},
        n_dropped={g: dropped.get(g, 0) for g in order},
    )


def write_survey(dataset: SurveyDataset, path):
    """Inverse of :func:`load_survey` (round-trips values and missingness)."""
    trait_ids = [t.trait_id for t in dataset.traits]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "respondent_id", *dataset.plain_covariate_names, *trait_ids])
        for g in dataset.groups:
            y = dataset.responses[g]
            x = dataset.covariates[g]
            rid = dataset.respondent_ids.get(g) or [str(i) for i in range(y.shape[0])]
            for i in range(y.shape[0]):
                row = [g, rid[i]]
                row += [repr(float(v)) for v in x[i, 1:]]
                row += ["" if v == MISSING else str(int(v)) for v in y[i]]
                w.writerow(row)


def load_proximity(path, groups) -> ProximityData:
    """Read pairwise proximity CSV; requires every unordered pair of ``groups``."""
    groups = list(groups)
    gset = set(groups)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header[:2] != ["k1", "k2"]:
            raise DataError(f"{path}: header must start with k1,k2")
        names = tuple(header[2:])
        if not names:
            raise DataError(f"{path}: no proximity columns")
        sim: dict[tuple[str, str], np.ndarray] = {}
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c for c in row):
                continue
            k1, k2 = row[0], row[1]
            if k1 == k2:
                raise DataError(f"{path}: row {row_no}: self-pair {k1!r}")
            if k1 not in gset or k2 not in gset:
                # pairs for groups outside the dataset are ignored
                continue
            v = np.array(
                [_parse_float(c, f"proximity {names[i]!r}", row_no)
                 for i, c in enumerate(row[2:])]
            )
            if v.shape != (len(names),):
                raise DataError(f"{path}: row {row_no}: expected {len(names)} values")
            if not np.all(np.isfinite(v)):
                raise DataError(
                    f"{path}: row {row_no}: non-finite proximity for ({k1},{k2})"
                )
            key = _pair_key(k1, k2)
            if key in sim:
                if not np.allclose(sim[key], v, rtol=0.0, atol=1e-9):
                    raise DataError(
                        f"{path}: row {row_no}: pair ({k1},{k2}) listed twice with "
                        f"disagreeing values"
                    )
                continue
            sim[key] = v
    for a in range(len(groups)):
        for b in range(a + 1, len(groups)):
            key = _pair_key(groups[a], groups[b])
            if key not in sim:
                raise DataError(f"{path}: missing proximity pair {key}")
    return ProximityData(dim=len(names), names=names, sim=sim)


def write_proximity(prox: ProximityData, groups, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["k1", "k2", *prox.names])
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                v = prox.get(groups[a], groups[b])
                w.writerow([groups[a], groups[b], *[repr(float(x)) for x in v]])


def describe(dataset: SurveyDataset) -> DescriptiveStats:
    """Per-group and overall means / missing fractions of the raw categories.

    Means are over non-missing entries only; a group x trait cell with no
    observations gets a NaN mean and missing fraction 1.
    """
    K, p = dataset.n_groups, dataset.n_traits
    gmean = np.full((K, p), np.nan)
    gmiss = np.zeros((K, p))
    tot_sum = np.zeros(p)
    tot_obs = np.zeros(p)
    tot_n = 0
    for a, g in enumerate(dataset.groups):
        y = dataset.responses[g]
        obs = y != MISSING
        cnt = obs.sum(axis=0)
        s = np.where(obs, y, 0).sum(axis=0).astype(float)
        with np.errstate(invalid="ignore"):
            gmean[a] = np.where(cnt > 0, s / np.maximum(cnt, 1), np.nan)
        gmiss[a] = 1.0 - cnt / y.shape[0]
        tot_sum += s
        tot_obs += cnt
        tot_n += y.shape[0]
    with np.errstate(invalid="ignore"):
        overall_mean = np.where(tot_obs > 0, tot_sum / np.maximum(tot_obs, 1), np.nan)
    overall_missing = 1.0 - tot_obs / tot_n
    with np.errstate(all="ignore"):
        mean_min = np.nanmin(gmean, axis=0)
        mean_max = np.nanmax(gmean, axis=0)
    return DescriptiveStats(
        groups=dataset.groups,
        trait_ids=tuple(t.trait_id for t in dataset.traits),
        group_mean=gmean,
        group_missing=gmiss,
        overall_mean=overall_mean,
        overall_missing=overall_missing,
        mean_min=mean_min,
        mean_max=mean_max,
        missing_min=gmiss.min(axis=0),
        missing_max=gmiss.max(axis=0),
    )
