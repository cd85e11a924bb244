"""One seeded recruitment run: allocate, round, recruit, learn, drift."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .belief import DEFAULT_EMPIRIC_SAMPLES, INFORMED_MASS, PriorScheme, init_empiric, init_prior, update_all
from .demographics import CohortCounts, JointDistribution, SchemaError, SiteModel
from .dynamics import step_dynamics
from .metrics import DistanceMetric, all_distances
from .policy import (
    PolicyKind,
    SolverConfig,
    distributed_adaptive_policy,
    informed_static_policy,
    naive_policies,
    round_allocation,
    thompson_policy,
)

log = logging.getLogger(__name__)

RESULT_SCHEMA = "recruitsim.result/1"

# Fixed stream ids: adding or removing one consumer never shifts another's sequence.
STREAM_IDS = {"prior": 0, "policy": 1, "recruit": 2}


def spawn_streams(seed: int) -> dict[str, np.random.Generator]:
    return {
        name: np.random.default_rng(np.random.SeedSequence([int(seed), sid]))
        for name, sid in STREAM_IDS.items()
    }


@dataclass(frozen=True)
class SimulationConfig:
    n_total: int = 10_000
    iterations: int = 20
    policy: PolicyKind = PolicyKind.ADAPTIVE
    prior: PriorScheme = PriorScheme.INFORMED
    metric: DistanceMetric = DistanceMetric.MKLD
    lam: float = 1.0
    kappa: float = 1.0
    seed: int = 0
    prior_mass: float = INFORMED_MASS
    empiric_samples: int = DEFAULT_EMPIRIC_SAMPLES
    static_samples: int = DEFAULT_EMPIRIC_SAMPLES
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        object.__setattr__(self, "policy", PolicyKind(self.policy))
        object.__setattr__(self, "prior", PriorScheme(self.prior))
        object.__setattr__(self, "metric", DistanceMetric.parse(self.metric))
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if self.n_total % self.iterations:
            raise ValueError(f"cohort size {self.n_total} is not divisible by {self.iterations} iterations")
        if not (self.lam > 0 and self.kappa > 0):
            raise ValueError("lam and kappa must be positive")

    @property
    def batch(self) -> int:
        return self.n_total // self.iterations

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("policy", "prior", "metric"):
            d[key] = getattr(self, key).value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        d = dict(d)
        if "solver" in d and isinstance(d["solver"], dict):
            d["solver"] = SolverConfig(**d["solver"])
        return cls(**d)


@dataclass
class IterationRecord:
    t: int
    rho: np.ndarray
    counts: np.ndarray
    recruits: np.ndarray
    distances: dict[str, float]
    cohort_total: int


@dataclass
class SimulationResult:
    config: SimulationConfig
    site_names: list[str]
    records: list[IterationRecord]
    cohort: CohortCounts
    belief_added: float

    @property
    def final_distances(self) -> dict[str, float]:
        return self.records[-1].distances

    def distance_series(self, metric) -> np.ndarray:
        key = DistanceMetric.parse(metric).value
        return np.array([r.distances[key] for r in self.records])

    def allocation_matrix(self) -> np.ndarray:
        return np.array([r.rho for r in self.records])

    def to_dict(self) -> dict:
        return {
            "schema_version": RESULT_SCHEMA,
            "config": self.config.to_dict(),
            "sites": self.site_names,
            "iterations": [
                {
                    "t": r.t,
                    "rho": r.rho.tolist(),
                    "counts": r.counts.tolist(),
                    "recruits": r.recruits.tolist(),
                    "distances": r.distances,
                    "cohort_total": r.cohort_total,
                }
                for r in self.records
            ],
            "final_cohort": self.cohort.counts.tolist(),
            "final_distances": self.final_distances,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema={RESULT_SCHEMA} seed={self.config.seed} distances_measured=after_recruitment\n")
        writer = csv.writer(buf, lineterminator="\n")
        metrics = [m.value for m in DistanceMetric]
        writer.writerow(["iteration", "site", "rho", "recruits", *metrics])
        for r in self.records:
            for j, name in enumerate(self.site_names):
                writer.writerow(
                    [r.t, name, repr(float(r.rho[j])), int(r.counts[j]), *(repr(r.distances[m]) for m in metrics)]
                )
        return buf.getvalue()


def recruit_batch(response, n: int, rng: np.random.Generator) -> np.ndarray:
    """Cell counts of ``n`` independent categorical draws from ``response``."""
    if n < 0:
        raise ValueError("recruit count must be nonnegative")
    p = response.probs if isinstance(response, JointDistribution) else np.asarray(response, dtype=float)
    return rng.multinomial(int(n), p / p.sum())


def _check_inputs(sites: Sequence[SiteModel], target: JointDistribution) -> None:
    if not sites:
        raise ValueError("need at least one site")
    for s in sites:
        if s.response.schema != target.schema:
            raise SchemaError(f"site {s.name} does not share the target's schema")


def run_simulation(
    config: SimulationConfig, sites: Sequence[SiteModel], target: JointDistribution
) -> SimulationResult:
    _check_inputs(sites, target)
    streams = spawn_streams(config.seed)
    schema = target.schema
    sites = [replace(s, lam=config.lam, kappa=config.kappa) for s in sites]
    n = len(sites)
    batch = config.batch
    metric = config.metric
    solver = config.solver

    static_rho = None
    if config.policy is PolicyKind.INFORMED_STATIC:
        belief = init_empiric(sites, config.static_samples, streams["prior"])
        static_rho = informed_static_policy(
            sites, target, metric, batch, config.static_samples, streams["prior"], solver,
            policy_rng=streams["policy"], prior_belief=belief,
        )
        pre_samples = config.static_samples * n
    else:
        belief = init_prior(
            config.prior, sites, mass=config.prior_mass,
            samples_per_site=config.empiric_samples, rng=streams["prior"],
        )
        pre_samples = config.empiric_samples * n if config.prior is PriorScheme.EMPIRIC else 0
    alpha0 = belief.alpha.sum()

    cohort = CohortCounts.empty(schema)
    records = []
    for t in range(1, config.iterations + 1):
        if config.policy is PolicyKind.THOMPSON:
            rho = thompson_policy(belief, cohort, target, metric, batch, streams["policy"], draws=solver.draws, schema=schema)
        elif config.policy is PolicyKind.ADAPTIVE:
            rho = distributed_adaptive_policy(belief, cohort, target, metric, batch, streams["policy"], solver, schema=schema)
        elif static_rho is not None:
            rho = static_rho
        else:
            rho = naive_policies(config.policy, n, streams["policy"])

        counts = round_allocation(rho, batch)
        recruits = np.array([recruit_batch(s.response, r, streams["recruit"]) for s, r in zip(sites, counts)])
        cohort = cohort.add(recruits.sum(axis=0))
        belief = update_all(belief, recruits)
        sites = [step_dynamics(s, float(min(max(rj, 0.0), 1.0))) for s, rj in zip(sites, rho)]

        records.append(
            IterationRecord(
                t=t,
                rho=np.array(rho, dtype=float),
                counts=counts,
                recruits=recruits,
                distances=all_distances(cohort.distribution(), target),
                cohort_total=cohort.total,
            )
        )
    return SimulationResult(
        config=config,
        site_names=[s.name for s in sites],
        records=records,
        cohort=cohort,
        belief_added=float(belief.alpha.sum() - alpha0) + pre_samples,
    )


def first_divergence(a: SimulationResult, b: SimulationResult) -> int | None:
    """Index (1-based) of the first iteration where two runs differ, or None."""
    if len(a.records) != len(b.records):
        return min(len(a.records), len(b.records)) + 1
    for ra, rb in zip(a.records, b.records):
        if not (
            np.array_equal(ra.rho, rb.rho)
            and np.array_equal(ra.recruits, rb.recruits)
            and ra.distances == rb.distances
        ):
            return ra.t
    return None


def replay_check(
    result: SimulationResult, config: SimulationConfig, sites: Sequence[SiteModel], target: JointDistribution
) -> bool:
    """Re-run ``config`` and compare bit-for-bit with ``result``."""
    if config != result.config:
        log.info("replay config differs from the recorded config")
    again = run_simulation(config, sites, target)
    t = first_divergence(result, again)
    if t is not None:
        log.warning("replay diverges at iteration %d", t)
        return False
    return True
