"""Representativeness distances between a cohort and a target population."""

from __future__ import annotations

import enum
import math

import numpy as np

from .demographics import JointDistribution, marginals_of_joint

# Natural log comes closest to the reference site MKLDs in data/site_reference.csv.
DEFAULT_BASE = math.e


class InfiniteDivergenceError(ValueError):
    """The first distribution puts mass where the second has none."""


class DistanceMetric(str, enum.Enum):
    MKLD = "mkld"
    UNIVARIATE_KLD = "ukld"
    DISTANCE_SUMMARY = "ds"

    @classmethod
    def parse(cls, value) -> "DistanceMetric":
        if isinstance(value, cls):
            return value
        aliases = {
            "multivariatekld": cls.MKLD,
            "univariatekldsum": cls.UNIVARIATE_KLD,
            "distancesummary": cls.DISTANCE_SUMMARY,
        }
        key = str(value).lower().replace("_", "").replace("-", "")
        if key in aliases:
            return aliases[key]
        return cls(str(value).lower())


def kl_divergence(q, p, base: float = DEFAULT_BASE) -> float:
    """KL(q || p) with the 0*log(0) = 0 convention."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.shape != p.shape:
        raise ValueError(f"shape mismatch: {q.shape} vs {p.shape}")
    support = q > 0
    if np.any(p[support] <= 0):
        raise InfiniteDivergenceError("q has mass on cells where p is zero")
    qs = q[support]
    value = float(np.sum(qs * np.log(qs / p[support])))
    if base != math.e:
        value /= math.log(base)
    # rounding can leave a tiny negative for q == p
    return max(value, 0.0)


def js_distance(q, p) -> float:
    """Square root of the base-2 Jensen-Shannon divergence; lies in [0, 1]."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    m = 0.5 * (q + p)
    div = 0.5 * kl_divergence(q, m, base=2.0) + 0.5 * kl_divergence(p, m, base=2.0)
    return math.sqrt(min(max(div, 0.0), 1.0))


def _probs(x) -> np.ndarray:
    return x.probs if isinstance(x, JointDistribution) else np.asarray(x, dtype=float)


def _marginals(x, schema):
    if not isinstance(x, JointDistribution):
        x = JointDistribution(x, schema)
    return marginals_of_joint(x).vectors


def univariate_kld_sum(cohort, target, base: float = DEFAULT_BASE) -> float:
    schema = target.schema if isinstance(target, JointDistribution) else cohort.schema
    return sum(
        kl_divergence(q, p, base)
        for q, p in zip(_marginals(cohort, schema), _marginals(target, schema))
    )


def distance_summary(cohort, target) -> float:
    schema = target.schema if isinstance(target, JointDistribution) else cohort.schema
    terms = [
        js_distance(q, p) for q, p in zip(_marginals(cohort, schema), _marginals(target, schema))
    ]
    return sum(terms) / len(terms)


def evaluate(metric, cohort, target, base: float = DEFAULT_BASE) -> float:
    metric = DistanceMetric.parse(metric)
    if metric is DistanceMetric.MKLD:
        return kl_divergence(_probs(cohort), _probs(target), base)
    if metric is DistanceMetric.UNIVARIATE_KLD:
        return univariate_kld_sum(cohort, target, base)
    return distance_summary(cohort, target)


def all_distances(cohort, target) -> dict[str, float]:
    return {m.value: evaluate(m, cohort, target) for m in DistanceMetric}
