"""Dirichlet-categorical beliefs about each site's response distribution."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .demographics import SiteModel

JEFFREYS_ALPHA = 0.5
DEFAULT_EMPIRIC_SAMPLES = 1000
# Concentration mass of a fully informed prior, on the order of a site's record count.
INFORMED_MASS = 1e6


class PriorScheme(str, enum.Enum):
    UNINFORMED = "uninformed"
    EMPIRIC = "empiric"
    INFORMED = "informed"


@dataclass(frozen=True)
class DirichletBelief:
    """Concentration matrix, one row per site."""

    alpha: np.ndarray

    def __post_init__(self):
        a = np.array(self.alpha, dtype=float)
        if a.ndim != 2:
            raise ValueError("alpha must be a (sites, cells) matrix")
        if not np.all(a > 0) or not np.all(np.isfinite(a)):
            raise ValueError("Dirichlet concentrations must be strictly positive and finite")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @property
    def n_sites(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_cells(self) -> int:
        return self.alpha.shape[1]

    def mean(self, j: int | None = None) -> np.ndarray:
        if j is None:
            return self.alpha / self.alpha.sum(axis=1, keepdims=True)
        return self.alpha[j] / self.alpha[j].sum()

    def total_concentration(self) -> np.ndarray:
        return self.alpha.sum(axis=1)


def init_jeffreys(n_sites: int, n_cells: int) -> DirichletBelief:
    if n_cells < 2:
        raise ValueError("need at least two cells")
    return DirichletBelief(np.full((n_sites, n_cells), JEFFREYS_ALPHA))


def init_informed(sites: Sequence[SiteModel], mass: float = 1.0) -> DirichletBelief:
    if mass <= 0:
        raise ValueError("prior mass must be positive")
    alpha = np.array([mass * s.response.probs for s in sites])
    # structurally empty cells still need a positive concentration
    alpha = np.maximum(alpha, 1e-300)
    return DirichletBelief(alpha)


def init_empiric(
    sites: Sequence[SiteModel],
    samples_per_site: int = DEFAULT_EMPIRIC_SAMPLES,
    rng: np.random.Generator | None = None,
) -> DirichletBelief:
    """Jeffreys base plus counts from ``samples_per_site`` draws at every site."""
    if samples_per_site < 0:
        raise ValueError("samples_per_site must be nonnegative")
    rng = rng if rng is not None else np.random.default_rng()
    belief = init_jeffreys(len(sites), sites[0].response.probs.size)
    if samples_per_site == 0:
        return belief
    counts = np.array([rng.multinomial(samples_per_site, s.response.probs) for s in sites])
    return DirichletBelief(belief.alpha + counts)


def sample_dirichlet(alpha, rng: np.random.Generator) -> np.ndarray:
    """One Dirichlet draw (or one per row) from normalized Gamma(alpha, 1) variates.

    Gamma variates are generated in log space as log G(a+1) + log(U)/a, which
    stays finite for the very small concentrations an informed prior can carry.
    """
    alpha = np.asarray(alpha, dtype=float)
    with np.errstate(over="ignore", divide="ignore"):
        log_g = np.log(rng.standard_gamma(alpha + 1.0)) + np.log(rng.random(alpha.shape)) / alpha
    log_g -= log_g.max(axis=-1, keepdims=True)
    w = np.exp(log_g)
    return w / w.sum(axis=-1, keepdims=True)


def sample_estimate(belief: DirichletBelief, j: int, rng: np.random.Generator) -> np.ndarray:
    return sample_dirichlet(belief.alpha[j], rng)


def sample_all(belief: DirichletBelief, rng: np.random.Generator) -> np.ndarray:
    """One draw per site, returned as a (sites, cells) matrix."""
    return sample_dirichlet(belief.alpha, rng)


def update_with_counts(belief: DirichletBelief, j: int, counts) -> DirichletBelief:
    counts = np.asarray(counts)
    if counts.shape != (belief.n_cells,):
        raise ValueError("counts must have one entry per cell")
    if np.any(counts < 0):
        raise ValueError("recruit counts cannot be negative")
    if not np.any(counts):
        return belief
    alpha = belief.alpha.copy()
    alpha[j] += counts
    return DirichletBelief(alpha)


def update_all(belief: DirichletBelief, counts) -> DirichletBelief:
    """Add a (sites, cells) count matrix in one step."""
    counts = np.asarray(counts)
    if counts.shape != belief.alpha.shape:
        raise ValueError("count matrix shape must match the belief")
    if np.any(counts < 0):
        raise ValueError("recruit counts cannot be negative")
    return DirichletBelief(belief.alpha + counts)


def init_prior(
    scheme,
    sites: Sequence[SiteModel],
    *,
    mass: float = 1.0,
    samples_per_site: int = DEFAULT_EMPIRIC_SAMPLES,
    rng: np.random.Generator | None = None,
) -> DirichletBelief:
    scheme = PriorScheme(scheme)
    if scheme is PriorScheme.UNINFORMED:
        return init_jeffreys(len(sites), sites[0].response.probs.size)
    if scheme is PriorScheme.INFORMED:
        return init_informed(sites, mass)
    return init_empiric(sites, samples_per_site, rng)
