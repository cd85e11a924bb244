"""Demographic schema, joint distributions and site data ingestion.

Cells are indexed row-major over the schema's attribute order (age outermost,
ethnicity innermost), so cell ``i`` of the default schema corresponds to
``np.unravel_index(i, (4, 2, 5, 2))``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

SUM_TOL = 1e-9

EXCLUDED_LABELS = frozenset(
    {"No Information", "Unknown", "Ambiguous", "Refuse to answer", "Other"}
)


class SchemaError(ValueError):
    """Raised when data does not conform to an attribute schema."""


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        object.__setattr__(
            self,
            "attributes",
            tuple((str(name), tuple(str(c) for c in cats)) for name, cats in self.attributes),
        )
        if not self.attributes:
            raise SchemaError("schema needs at least one attribute")
        for name, cats in self.attributes:
            if len(cats) < 1:
                raise SchemaError(f"attribute {name!r} has no categories")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.attributes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(cats) for _, cats in self.attributes)

    @property
    def cell_count(self) -> int:
        return int(np.prod(self.shape))

    def categories(self, attribute: str) -> tuple[str, ...]:
        for name, cats in self.attributes:
            if name == attribute:
                return cats
        raise SchemaError(f"unknown attribute {attribute!r}")

    def cell_index(self, labels: Sequence[str]) -> int:
        if len(labels) != len(self.attributes):
            raise SchemaError(f"expected {len(self.attributes)} labels, got {len(labels)}")
        idx = tuple(cats.index(lab) for (_, cats), lab in zip(self.attributes, labels))
        return int(np.ravel_multi_index(idx, self.shape))

    def cell_labels(self, index: int) -> tuple[str, ...]:
        idx = np.unravel_index(index, self.shape)
        return tuple(cats[i] for (_, cats), i in zip(self.attributes, idx))

    def to_dict(self) -> dict:
        return {"attributes": [{"name": n, "categories": list(c)} for n, c in self.attributes]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "AttributeSchema":
        return cls(tuple((a["name"], tuple(a["categories"])) for a in data["attributes"]))


DEFAULT_SCHEMA = AttributeSchema(
    (
        ("age", ("0-17", "18-44", "45-64", "65+")),
        ("gender", ("Female", "Male")),
        ("race", ("AI/AN", "Asian", "Black", "NH/PI", "White")),
        ("ethnicity", ("H/L", "NH/L")),
    )
)


def _check_probability_vector(vec: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(vec)):
        raise ValueError(f"{what} contains non-finite values")
    if np.any(vec < 0):
        raise ValueError(f"{what} has negative entries")
    if abs(vec.sum() - 1.0) > SUM_TOL:
        raise ValueError(f"{what} sums to {vec.sum():.12g}, not 1")


@dataclass(frozen=True)
class MarginalSet:
    schema: AttributeSchema
    vectors: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.vectors) != len(self.schema.attributes):
            raise SchemaError(
                f"expected {len(self.schema.attributes)} marginals, got {len(self.vectors)}"
            )
        vecs = []
        for (name, cats), v in zip(self.schema.attributes, self.vectors):
            v = np.asarray(v, dtype=float)
            if v.shape != (len(cats),):
                raise SchemaError(f"marginal {name!r} has shape {v.shape}, expected ({len(cats)},)")
            _check_probability_vector(v, f"marginal {name!r}")
            vecs.append(_frozen(v))
        object.__setattr__(self, "vectors", tuple(vecs))

    @classmethod
    def normalized(cls, schema: AttributeSchema, raw: Iterable[Sequence[float]]) -> "MarginalSet":
        vecs = []
        for v in raw:
            v = np.asarray(v, dtype=float)
            vecs.append(v / v.sum())
        return cls(schema, tuple(vecs))

    def __getitem__(self, attribute: str) -> np.ndarray:
        return self.vectors[self.schema.names.index(attribute)]

    def to_dict(self) -> dict:
        return {
            name: dict(zip(cats, map(float, v)))
            for (name, cats), v in zip(self.schema.attributes, self.vectors)
        }


@dataclass(frozen=True)
class JointDistribution:
    probs: np.ndarray
    schema: AttributeSchema = DEFAULT_SCHEMA

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (self.schema.cell_count,):
            raise SchemaError(f"joint has shape {p.shape}, expected ({self.schema.cell_count},)")
        _check_probability_vector(p, "joint distribution")
        object.__setattr__(self, "probs", _frozen(p))

    @classmethod
    def normalized(cls, weights, schema: AttributeSchema = DEFAULT_SCHEMA) -> "JointDistribution":
        w = np.asarray(weights, dtype=float)
        total = w.sum()
        if not total > 0:
            raise ValueError("cannot normalize a vector with no positive mass")
        return cls(w / total, schema)

    def to_dict(self) -> dict:
        return {
            "schema": self.schema.to_dict(),
            "cells": [
                {"labels": list(self.schema.cell_labels(i)), "p": float(p)}
                for i, p in enumerate(self.probs)
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "JointDistribution":
        schema = AttributeSchema.from_dict(data["schema"])
        probs = np.zeros(schema.cell_count)
        for cell in data["cells"]:
            probs[schema.cell_index(cell["labels"])] = cell["p"]
        return cls(probs, schema)


@dataclass(frozen=True)
class CohortCounts:
    counts: np.ndarray
    schema: AttributeSchema = DEFAULT_SCHEMA

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.shape != (self.schema.cell_count,):
            raise SchemaError(f"counts have shape {c.shape}, expected ({self.schema.cell_count},)")
        if not np.issubdtype(c.dtype, np.integer):
            if not np.all(c == np.round(c)):
                raise ValueError("cohort counts must be integers")
        c = c.astype(np.int64)
        if np.any(c < 0):
            raise ValueError("cohort counts must be nonnegative")
        object.__setattr__(self, "counts", _frozen(c, np.int64))

    @classmethod
    def empty(cls, schema: AttributeSchema = DEFAULT_SCHEMA) -> "CohortCounts":
        return cls(np.zeros(schema.cell_count, dtype=np.int64), schema)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def add(self, counts) -> "CohortCounts":
        return CohortCounts(self.counts + np.asarray(counts, dtype=np.int64), self.schema)

    def distribution(self) -> JointDistribution:
        if self.total == 0:
            raise ValueError("empty cohort has no distribution")
        return JointDistribution(self.counts / self.total, self.schema)


@dataclass(frozen=True)
class SiteModel:
    name: str
    response: JointDistribution
    lam: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        if not (self.lam > 0 and self.kappa > 0):
            raise ValueError(f"site {self.name}: shift and bias factors must be positive")


def joint_from_marginals(m: MarginalSet) -> JointDistribution:
    probs = m.vectors[0]
    for v in m.vectors[1:]:
        probs = np.multiply.outer(probs, v)
    probs = np.asarray(probs, dtype=float).ravel()
    # renormalize away float drift from the products
    return JointDistribution(probs / probs.sum(), m.schema)


def marginals_of_joint(j: JointDistribution) -> MarginalSet:
    grid = j.probs.reshape(j.schema.shape)
    axes = range(grid.ndim)
    vecs = []
    for k in axes:
        v = grid.sum(axis=tuple(a for a in axes if a != k))
        vecs.append(v / v.sum())
    return MarginalSet(j.schema, tuple(vecs))


def ratio_table_to_marginals(
    census: MarginalSet,
    ratios: Sequence[Sequence[float]],
    *,
    max_raw_error: float = 0.02,
) -> MarginalSet:
    """Convert signed over/under-representation ratios into site marginals.

    A positive ratio ``r`` means the site holds ``r`` times the census share; a
    negative ratio ``-r`` means the census share is ``r`` times the site's.
    """
    if len(ratios) != len(census.vectors):
        raise SchemaError(f"expected {len(census.vectors)} ratio vectors, got {len(ratios)}")
    out = []
    for (name, cats), base, r in zip(census.schema.attributes, census.vectors, ratios):
        r = np.asarray(r, dtype=float)
        if r.shape != base.shape:
            raise SchemaError(f"ratio vector for {name!r} has {r.size} entries, expected {base.size}")
        for cat, value in zip(cats, r):
            if value == 0 or not np.isfinite(value):
                raise ValueError(f"invalid ratio {value} for {name}={cat}")
        raw = np.where(r > 0, base * r, base / np.abs(r))
        if abs(raw.sum() - 1.0) > max_raw_error:
            raise ValueError(
                f"converted {name!r} proportions sum to {raw.sum():.4f}; check the ratio table"
            )
        out.append(raw / raw.sum())
    return MarginalSet(census.schema, tuple(out))


def clean_counts_to_distribution(
    raw: Mapping[str, float], excluded: Iterable[str] = EXCLUDED_LABELS
) -> np.ndarray:
    """Drop excluded labels and normalize the rest, in the mapping's order."""
    excluded = set(excluded)
    kept = [float(v) for k, v in raw.items() if k not in excluded]
    if any(v < 0 for v in raw.values()):
        raise ValueError("counts must be nonnegative")
    total = sum(kept)
    if total <= 0:
        raise ValueError("no mass left after excluding unknown/missing categories")
    return np.array(kept) / total


def _parse_age_bin(label: str) -> tuple[float, float]:
    label = label.strip()
    if label.endswith("+"):
        return float(label[:-1]), np.inf
    lo, hi = label.split("-")
    return float(lo), float(hi)


AGE_BINS = ((0, 17), (18, 44), (45, 64), (65, np.inf))


def redistribute_age_bin(
    bin_counts: Mapping[str, float],
    *,
    split: tuple[float, float] = (0.6, 0.4),
    normalize: bool = True,
) -> np.ndarray:
    """Collapse 5-year Census age bins into the four schema age bins.

    The 15-19 bin straddles the 17/18 boundary and is split ``split`` between
    the 0-17 and 18-44 bins; every other bin must fall inside one output bin.
    """
    mass = np.zeros(len(AGE_BINS))
    for label, count in bin_counts.items():
        lo, hi = _parse_age_bin(label)
        if (lo, hi) == (15, 19):
            mass[0] += split[0] * count
            mass[1] += split[1] * count
            continue
        for k, (blo, bhi) in enumerate(AGE_BINS):
            if blo <= lo and hi <= bhi:
                mass[k] += count
                break
        else:
            raise ValueError(f"age bin {label!r} straddles an output boundary")
    if normalize:
        return mass / mass.sum()
    return mass


def apply_participation_rates(demographic: JointDistribution, rates) -> JointDistribution:
    rates = np.asarray(rates, dtype=float)
    if rates.shape != demographic.probs.shape:
        raise SchemaError("rates must have one entry per cell")
    if np.any(rates <= 0):
        raise ValueError("participation rates must be strictly positive")
    weighted = demographic.probs * rates
    if weighted.sum() <= 0:
        raise ValueError("participation-weighted distribution has no mass")
    return JointDistribution(weighted / weighted.sum(), demographic.schema)


# ---------------------------------------------------------------------------
# Site ratio table I/O


@dataclass
class RatioTable:
    census: MarginalSet
    site_ratios: dict[str, list[np.ndarray]] = field(default_factory=dict)

    @property
    def site_names(self) -> list[str]:
        return list(self.site_ratios)

    def site_marginals(self, name: str) -> MarginalSet:
        return ratio_table_to_marginals(self.census, self.site_ratios[name])

    def sites(self, lam: float = 1.0, kappa: float = 1.0) -> list[SiteModel]:
        return [
            SiteModel(name, joint_from_marginals(self.site_marginals(name)), lam, kappa)
            for name in self.site_names
        ]

    def target(self) -> JointDistribution:
        return joint_from_marginals(self.census)


def bundled_table_path() -> Path:
    return Path(str(resources.files("recruitsim") / "data" / "site_ratios.csv"))


def read_ratio_csv(path, schema: AttributeSchema = DEFAULT_SCHEMA) -> RatioTable:
    """Read a ratio CSV: ``attribute,category,census,<site>...``, one row per category."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["attribute", "category", "census"]:
            raise SchemaError(f"{path}: header must start with attribute,category,census")
        sites = header[3:]
        rows = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                values = [float(x) for x in row[2:]]
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
            rows[(row[0], row[1])] = values
            for site, v in zip(sites, values[1:]):
                if v == 0:
                    raise SchemaError(f"{path}:{lineno}: ratio 0 for site {site} at {row[0]}={row[1]}")

    census, per_site = [], {s: [] for s in sites}
    for name, cats in schema.attributes:
        col = []
        for cat in cats:
            if (name, cat) not in rows:
                raise SchemaError(f"{path}: missing row {name},{cat}")
            col.append(rows[(name, cat)])
        col = np.array(col)
        census.append(col[:, 0])
        for k, s in enumerate(sites):
            per_site[s].append(col[:, k + 1])
    extra = set(rows) - {(n, c) for n, cats in schema.attributes for c in cats}
    if extra:
        raise SchemaError(f"{path}: rows not in schema: {sorted(extra)}")
    return RatioTable(MarginalSet.normalized(schema, census), per_site)


def read_census_csv(path, schema: AttributeSchema = DEFAULT_SCHEMA) -> MarginalSet:
    """Read ``attribute,category,proportion`` rows into a normalized marginal set."""
    path = Path(path)
    values = {}
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                values[(row["attribute"], row["category"])] = float(row["proportion"])
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"{path}:{lineno}: bad census row ({exc})") from None
    try:
        raw = [[values[(n, c)] for c in cats] for n, cats in schema.attributes]
    except KeyError as exc:
        raise SchemaError(f"{path}: missing census row {exc.args[0]}") from None
    return MarginalSet.normalized(schema, raw)


def load_table(ratio_csv=None, census_csv=None, schema: AttributeSchema = DEFAULT_SCHEMA) -> RatioTable:
    table = read_ratio_csv(ratio_csv or bundled_table_path(), schema)
    if census_csv is not None:
        table.census = read_census_csv(census_csv, schema)
    return table


# ---------------------------------------------------------------------------
# Site bundles (JSON)

BUNDLE_SCHEMA = "recruitsim.sites/1"


def write_site_bundle(path, sites: Sequence[SiteModel], target: JointDistribution) -> None:
    doc = {
        "schema_version": BUNDLE_SCHEMA,
        "target": target.to_dict(),
        "sites": [{"name": s.name, "response": s.response.to_dict()} for s in sites],
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def read_site_bundle(path) -> tuple[list[SiteModel], JointDistribution]:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != BUNDLE_SCHEMA:
        raise SchemaError(f"{path}: unsupported bundle version {doc.get('schema_version')!r}")
    target = JointDistribution.from_dict(doc["target"])
    sites = [SiteModel(s["name"], JointDistribution.from_dict(s["response"])) for s in doc["sites"]]
    for s in sites:
        if s.response.schema != target.schema:
            raise SchemaError(f"{path}: site {s.name} schema differs from the target's")
    return sites, target
