"""Per-iteration allocation of recruitment resources across sites."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .belief import DirichletBelief, init_empiric, sample_all
from .demographics import AttributeSchema, CohortCounts, DEFAULT_SCHEMA, JointDistribution, SiteModel
from .metrics import DistanceMetric

log = logging.getLogger(__name__)


class PolicyKind(str, enum.Enum):
    RANDOM_SITE = "random_site"
    UNIFORM = "uniform"
    INFORMED_STATIC = "informed_static"
    THOMPSON = "thompson"
    ADAPTIVE = "adaptive"

    @property
    def reads_belief(self) -> bool:
        return self in (PolicyKind.THOMPSON, PolicyKind.ADAPTIVE)


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 10_000
    ftol: float = 1e-9
    gap_tol: float = 1e-6
    step0: float = 1.0
    fd_step: float = 1e-6
    draws: int = 1
    strict: bool = False


@dataclass
class SolverResult:
    rho: np.ndarray
    value: float
    iterations: int
    gap: float
    converged: bool


class SolverNotConverged(RuntimeError):
    def __init__(self, result: SolverResult):
        super().__init__(
            f"simplex solver stopped after {result.iterations} iterations with gap {result.gap:.3g}"
        )
        self.result = result


def _as_counts(cohort) -> np.ndarray:
    if isinstance(cohort, CohortCounts):
        return cohort.counts.astype(float)
    return np.asarray(cohort, dtype=float)


def _as_probs(x) -> np.ndarray:
    return x.probs if isinstance(x, JointDistribution) else np.asarray(x, dtype=float)


def candidate_mix(cohort, estimates, rho, batch: int) -> np.ndarray:
    """Expected cohort distribution after recruiting ``batch`` people under ``rho``."""
    if batch < 1:
        raise ValueError("batch must be at least 1")
    counts = _as_counts(cohort)
    expected = batch * np.asarray(rho, dtype=float) @ np.asarray(estimates, dtype=float)
    return (counts + expected) / (counts.sum() + batch)


# ---------------------------------------------------------------------------
# Objective g(rho) = mean_k F(mix_k(rho), target)


class MixtureObjective:
    """Distance of the expected post-recruitment cohort from the target.

    ``estimates`` has shape (draws, sites, cells); the objective averages over
    the leading axis.
    """

    def __init__(self, cohort, estimates, batch, target, metric, schema: AttributeSchema = DEFAULT_SCHEMA, fd_step=1e-6):
        self.counts = _as_counts(cohort)
        est = np.asarray(estimates, dtype=float)
        self.estimates = est[None] if est.ndim == 2 else est
        self.batch = batch
        self.scale = batch / (self.counts.sum() + batch)
        self.target = _as_probs(target)
        self.metric = DistanceMetric.parse(metric)
        self.shape = schema.shape
        self.fd_step = fd_step
        self._base = self.counts / (self.counts.sum() + batch)
        self._log_target = np.log(np.maximum(self.target, 1e-300))
        self._target_marginals = self._marginals(self.target)

    @property
    def n_sites(self) -> int:
        return self.estimates.shape[1]

    def mixes(self, rho) -> np.ndarray:
        return self._base + self.scale * np.einsum("j,kjm->km", rho, self.estimates)

    def _marginals(self, probs):
        grid = np.asarray(probs).reshape(probs.shape[:-1] + self.shape)
        lead = probs.ndim - 1
        axes = range(len(self.shape))
        return [
            grid.sum(axis=tuple(lead + b for b in axes if b != a)) for a in axes
        ]

    def _value_one(self, mix) -> float:
        if self.metric is DistanceMetric.MKLD:
            if mix.min() > 0:
                return float(mix @ (np.log(mix) - self._log_target))
            pos = mix > 0
            return float(mix[pos] @ (np.log(mix[pos]) - self._log_target[pos]))
        margs = self._marginals(mix)
        if self.metric is DistanceMetric.UNIVARIATE_KLD:
            total = 0.0
            for q, p in zip(margs, self._target_marginals):
                pos = q > 0
                total += float(np.sum(q[pos] * np.log(q[pos] / p[pos])))
            return total
        total = 0.0
        for q, p in zip(margs, self._target_marginals):
            q = np.maximum(q, 0.0)
            m = 0.5 * (q + p)
            div = 0.0
            for x in (q, p):
                pos = x > 0
                div += 0.5 * float(np.sum(x[pos] * np.log2(x[pos] / m[pos])))
            total += np.sqrt(min(max(div, 0.0), 1.0))
        return total / len(margs)

    def value(self, rho) -> float:
        mixes = self.mixes(rho)
        if len(mixes) == 1:
            return self._value_one(mixes[0])
        return sum(self._value_one(m) for m in mixes) / len(mixes)

    def gradient(self, rho) -> np.ndarray:
        if self.metric is DistanceMetric.DISTANCE_SUMMARY:
            return self._fd_gradient(rho)
        grads = []
        for est, mix in zip(self.estimates, self.mixes(rho)):
            with np.errstate(divide="ignore"):
                log_mix = np.log(np.maximum(mix, 1e-300))
            if self.metric is DistanceMetric.MKLD:
                cell_grad = log_mix - self._log_target + 1.0
            else:
                cell_grad = np.zeros(self.shape)
                for a, (q, p) in enumerate(zip(self._marginals(mix), self._target_marginals)):
                    term = np.log(np.maximum(q, 1e-300) / p) + 1.0
                    view = [1] * len(self.shape)
                    view[a] = -1
                    cell_grad = cell_grad + term.reshape(view)
                cell_grad = cell_grad.ravel()
            grads.append(self.scale * est @ cell_grad)
        return np.mean(grads, axis=0)

    def _fd_gradient(self, rho) -> np.ndarray:
        h = self.fd_step
        grad = np.empty(self.n_sites)
        for j in range(self.n_sites):
            e = np.zeros(self.n_sites)
            e[j] = h
            grad[j] = (self.value(rho + e) - self.value(rho - e)) / (2 * h)
        return grad

    def vertex_values(self) -> np.ndarray:
        eye = np.eye(self.n_sites)
        return np.array([self.value(e) for e in eye])


def _kl_simplex(a, log_a, log_b) -> float:
    pos = a > 0
    return float(a[pos] @ (log_a[pos] - log_b[pos]))


def minimize_on_simplex(objective: MixtureObjective, config: SolverConfig = SolverConfig()) -> SolverResult:
    """Exponentiated-gradient descent with backtracking from the uniform point.

    Convergence is certified by the Frank-Wolfe gap ``<g, rho> - min(g)``,
    which bounds the suboptimality of a convex objective.
    """
    n = objective.n_sites
    rho = np.full(n, 1.0 / n)
    f = objective.value(rho)
    g = objective.gradient(rho)
    eta = config.step0
    gap = float(g @ rho - g.min())
    converged = gap <= config.gap_tol
    it = 0
    while not converged and it < config.max_iter:
        it += 1
        shifted = g - g.min()
        with np.errstate(divide="ignore"):
            log_rho = np.log(rho)
        while True:
            z = log_rho - eta * shifted
            z -= z.max()
            cand = np.exp(z)
            total = cand.sum()
            cand /= total
            f_cand = objective.value(cand)
            bound = f + g @ (cand - rho) + _kl_simplex(cand, z - np.log(total), log_rho) / eta
            if f_cand <= bound + 1e-15 or eta < 1e-12:
                break
            eta *= 0.5
        improvement = f - f_cand
        if improvement < 0:
            # line search bottomed out without descent
            break
        rho, f = cand, f_cand
        g = objective.gradient(rho)
        gap = float(g @ rho - g.min())
        eta *= 2.0
        converged = gap <= config.gap_tol or improvement < config.ftol
    return SolverResult(rho, f, it, gap, converged)


# ---------------------------------------------------------------------------
# Policies


def uniform_allocation(n_sites: int) -> np.ndarray:
    return np.full(n_sites, 1.0 / n_sites)


def one_hot(n_sites: int, j: int) -> np.ndarray:
    rho = np.zeros(n_sites)
    rho[j] = 1.0
    return rho


def naive_policies(kind, n_sites: int, rng: np.random.Generator) -> np.ndarray:
    kind = PolicyKind(kind)
    if n_sites < 1:
        raise ValueError("need at least one site")
    if kind is PolicyKind.UNIFORM:
        return uniform_allocation(n_sites)
    if kind is PolicyKind.RANDOM_SITE:
        return one_hot(n_sites, int(rng.integers(n_sites)))
    raise ValueError(f"{kind.value} is not a naive policy")


def draw_estimates(belief: DirichletBelief, rng: np.random.Generator, draws: int = 1) -> np.ndarray:
    """``draws`` posterior samples for every site, shape (draws, sites, cells)."""
    return np.stack([sample_all(belief, rng) for _ in range(draws)])


def thompson_policy(
    belief: DirichletBelief,
    cohort,
    target,
    metric,
    batch: int,
    rng: np.random.Generator,
    *,
    draws: int = 1,
    estimates=None,
    schema: AttributeSchema = DEFAULT_SCHEMA,
) -> np.ndarray:
    if estimates is None:
        estimates = draw_estimates(belief, rng, draws)
    obj = MixtureObjective(cohort, estimates, batch, target, metric, schema)
    # np.argmin takes the lowest index among ties
    return one_hot(obj.n_sites, int(np.argmin(obj.vertex_values())))


def solve_allocation(objective: MixtureObjective, solver: SolverConfig = SolverConfig()) -> SolverResult:
    result = minimize_on_simplex(objective, solver)
    if not result.converged:
        if solver.strict:
            raise SolverNotConverged(result)
        log.warning("simplex solver did not converge (gap %.3g); using best iterate", result.gap)
    vertices = objective.vertex_values()
    best = int(np.argmin(vertices))
    if vertices[best] < result.value:
        result = SolverResult(one_hot(objective.n_sites, best), float(vertices[best]), result.iterations, result.gap, result.converged)
    return result


def distributed_adaptive_policy(
    belief: DirichletBelief,
    cohort,
    target,
    metric,
    batch: int,
    rng: np.random.Generator,
    solver: SolverConfig = SolverConfig(),
    *,
    estimates=None,
    schema: AttributeSchema = DEFAULT_SCHEMA,
) -> np.ndarray:
    if estimates is None:
        estimates = draw_estimates(belief, rng, solver.draws)
    obj = MixtureObjective(cohort, estimates, batch, target, metric, schema, solver.fd_step)
    return solve_allocation(obj, solver).rho


def informed_static_policy(
    sites: Sequence[SiteModel],
    target,
    metric,
    batch: int,
    samples_per_site: int = 1000,
    rng: np.random.Generator | None = None,
    solver: SolverConfig = SolverConfig(),
    *,
    policy_rng: np.random.Generator | None = None,
    prior_belief: DirichletBelief | None = None,
) -> np.ndarray:
    """Optimize once against an empiric prior from pre-simulation samples.

    ``rng`` drives the pre-simulation draws; ``policy_rng`` (defaulting to
    ``rng``) drives the posterior draw fed to the optimizer. A prebuilt
    ``prior_belief`` skips the sampling step.
    """
    if samples_per_site < 1:
        raise ValueError("samples_per_site must be at least 1")
    rng = rng if rng is not None else np.random.default_rng()
    belief = prior_belief if prior_belief is not None else init_empiric(sites, samples_per_site, rng)
    schema = sites[0].response.schema
    cohort = np.zeros(schema.cell_count)
    return distributed_adaptive_policy(
        belief, cohort, target, metric, batch, policy_rng or rng, solver, schema=schema
    )


def round_allocation(rho, batch: int) -> np.ndarray:
    """Largest-remainder apportionment of ``batch`` units; ties go to the lower index."""
    if batch < 0:
        raise ValueError("batch must be nonnegative")
    quotas = batch * np.asarray(rho, dtype=float)
    counts = np.floor(quotas).astype(np.int64)
    remainders = quotas - counts
    leftover = int(batch - counts.sum())
    if leftover < 0 or leftover > len(counts):
        raise ValueError("allocation does not sum to 1")
    order = np.lexsort((np.arange(len(counts)), -remainders))
    counts[order[:leftover]] += 1
    return counts
