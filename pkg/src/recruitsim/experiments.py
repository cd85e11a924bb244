"""Replicate batteries, factor sweeps and figure-data export."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .demographics import JointDistribution, SiteModel, marginals_of_joint
from .metrics import DistanceMetric
from .simulator import SimulationConfig, SimulationResult, run_simulation

REPORT_VERSION = "1"
AXES = ("none", "lam", "kappa")

DEFAULT_LAMBDA_GRID = (0.8, 1.4, 0.05)
DEFAULT_KAPPA_GRID = (0.7, 1.4, 0.05)


class ReplicateError(RuntimeError):
    def __init__(self, seed: int, cause: BaseException):
        super().__init__(f"replicate with seed {seed} failed: {cause!r}")
        self.seed = seed


def grid(start: float, stop: float, step: float) -> list[float]:
    """Inclusive range, rounded so that 0.05 steps give clean keys."""
    if step <= 0:
        raise ValueError("step must be positive")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + k * step, 10) for k in range(n)]


def credible_interval(samples, level: float = 0.95) -> tuple[float, float, float]:
    """Interval for the mean under the non-informative prior.

    The posterior of the mean is Student-t with n-1 degrees of freedom,
    centered on the sample mean with scale s/sqrt(n).
    """
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples for a credible interval")
    mean = float(x.mean())
    s = float(x.std(ddof=1))
    if s == 0.0:
        return mean, mean, mean
    half = float(stats.t.ppf(0.5 + level / 2, n - 1)) * s / math.sqrt(n)
    return mean - half, mean, mean + half


@dataclass(frozen=True)
class ExperimentSpec:
    base: SimulationConfig = field(default_factory=SimulationConfig)
    replicates: int = 100
    base_seed: int = 0
    axis: str = "none"
    label: str = ""

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError("need at least two replicates to form credible intervals")
        if self.axis not in AXES:
            raise ValueError(f"sweep axis must be one of {AXES}")

    def seeds(self) -> list[int]:
        return [self.base_seed + i for i in range(self.replicates)]


@dataclass
class AggregateResult:
    label: str
    config: dict
    site_names: list[str]
    seeds: list[int]
    # metric -> (iterations, 3) array of (lower, mean, upper)
    series: dict[str, np.ndarray]
    # metric -> final-iteration value of every replicate, ordered by seed
    finals: dict[str, np.ndarray]
    allocation: np.ndarray
    # attribute -> mean final cohort marginal
    marginals: dict[str, np.ndarray]

    @property
    def replicates(self) -> int:
        return len(self.seeds)

    def final_interval(self, metric="mkld", level: float = 0.95):
        return credible_interval(self.finals[DistanceMetric.parse(metric).value], level)

    def mean_series(self, metric="mkld") -> np.ndarray:
        return self.series[DistanceMetric.parse(metric).value][:, 1]

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "config": self.config,
            "sites": self.site_names,
            "seeds": self.seeds,
            "series": {k: v.tolist() for k, v in self.series.items()},
            "finals": {k: v.tolist() for k, v in self.finals.items()},
            "allocation": self.allocation.tolist(),
            "marginals": {k: v.tolist() for k, v in self.marginals.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AggregateResult":
        return cls(
            label=d["label"],
            config=d["config"],
            site_names=list(d["sites"]),
            seeds=list(d["seeds"]),
            series={k: np.array(v) for k, v in d["series"].items()},
            finals={k: np.array(v) for k, v in d["finals"].items()},
            allocation=np.array(d["allocation"]),
            marginals={k: np.array(v) for k, v in d["marginals"].items()},
        )


def aggregate(results: Sequence[SimulationResult], label: str = "", level: float = 0.95) -> AggregateResult:
    """Summarize replicate runs; the result does not depend on input order."""
    if len(results) < 2:
        raise ValueError("need at least two replicates to aggregate")
    results = sorted(results, key=lambda r: r.config.seed)
    first = results[0]
    series, finals = {}, {}
    for m in DistanceMetric:
        values = np.array([r.distance_series(m) for r in results])
        series[m.value] = np.array([credible_interval(col, level) for col in values.T])
        finals[m.value] = values[:, -1]
    allocation = np.mean([r.allocation_matrix() for r in results], axis=0)
    schema = first.cohort.schema
    margs = [marginals_of_joint(r.cohort.distribution()) for r in results]
    marginals = {
        name: np.mean([m.vectors[a] for m in margs], axis=0) for a, name in enumerate(schema.names)
    }
    return AggregateResult(
        label=label,
        config=first.config.to_dict(),
        site_names=list(first.site_names),
        seeds=[r.config.seed for r in results],
        series=series,
        finals=finals,
        allocation=allocation,
        marginals=marginals,
    )


def _run_one(args):
    config, sites, target = args
    try:
        return run_simulation(config, sites, target)
    except Exception as exc:  # noqa: BLE001 - re-raised with the seed attached
        raise ReplicateError(config.seed, exc) from exc


def run_configs(configs: Sequence[SimulationConfig], sites, target, jobs: int = 1) -> list[SimulationResult]:
    work = [(c, list(sites), target) for c in configs]
    if jobs <= 1:
        return [_run_one(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, work))


def run_replicates(
    spec: ExperimentSpec, sites: Sequence[SiteModel], target: JointDistribution, jobs: int = 1
) -> AggregateResult:
    configs = [replace(spec.base, seed=s) for s in spec.seeds()]
    return aggregate(run_configs(configs, sites, target, jobs), spec.label)


def sweep(
    spec: ExperimentSpec,
    points: Sequence[float],
    sites: Sequence[SiteModel],
    target: JointDistribution,
    jobs: int = 1,
) -> dict[float, AggregateResult]:
    if spec.axis == "none":
        raise ValueError("sweep needs an axis (lam or kappa)")
    if not points:
        raise ValueError("sweep needs at least one point")
    if any(v <= 0 for v in points):
        raise ValueError("factor values must be positive")
    out = {}
    for v in sorted(points):
        point = replace(spec, base=replace(spec.base, **{spec.axis: v}))
        out[v] = run_replicates(point, sites, target, jobs)
    return out


# ---------------------------------------------------------------------------
# Report files
#
# Every CSV starts with a "# schema=... " comment line, then a header row.


def _header(name: str, extra: Mapping[str, object]) -> str:
    parts = [f"schema=recruitsim.{name}/{REPORT_VERSION}"]
    parts += [f"{k}={v}" for k, v in extra.items() if v is not None]
    return "# " + " ".join(parts) + "\n"


def _write_csv(path: Path, name: str, meta: Mapping, header: Sequence[str], rows) -> Path:
    buf = io.StringIO()
    buf.write(_header(name, meta))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue())
    return path


def read_report_csv(path) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Parse a report CSV into (header metadata, rows)."""
    lines = Path(path).read_text().splitlines()
    meta = dict(item.split("=", 1) for item in lines[0].lstrip("# ").split())
    return meta, list(csv.DictReader(lines[1:]))


def _fmt(x: float) -> str:
    return repr(float(x))


def export_report(
    out_dir,
    battery: Mapping[str, AggregateResult] | None = None,
    sweeps: Mapping[str, Mapping[float, AggregateResult]] | None = None,
    *,
    target: JointDistribution | None = None,
    axis: str | None = None,
    manifest_hash: str | None = None,
) -> list[Path]:
    """Write figure-ready CSVs and return their paths.

    battery -> iteration_series.csv, allocation_heatmap.csv and, given the
    target, subgroup_proportions.csv; sweeps -> sweep.csv.
    """
    if not battery and not sweeps:
        raise ValueError("nothing to export")
    if sweeps is not None and any(len(points) == 0 for points in sweeps.values()):
        raise ValueError("empty sweep")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def meta(agg: AggregateResult | None = None):
        seeds = None
        if agg is not None:
            seeds = f"{agg.seeds[0]}-{agg.seeds[-1]}"
        return {"manifest": manifest_hash, "seeds": seeds, "distances_measured": "after_recruitment"}

    if battery:
        any_agg = next(iter(battery.values()))
        rows = []
        for label, agg in battery.items():
            for metric in (m.value for m in DistanceMetric):
                arr = agg.series[metric]
                for t, (lo, mean, hi) in enumerate(arr, start=1):
                    rows.append([label, t, metric, _fmt(mean), _fmt(lo), _fmt(hi), agg.replicates])
        written.append(_write_csv(
            out / "iteration_series.csv", "iteration_series", meta(any_agg),
            ["label", "iteration", "metric", "mean", "lower", "upper", "replicates"], rows,
        ))

        rows = []
        for label, agg in battery.items():
            for t, row in enumerate(agg.allocation, start=1):
                rows.append([label, t, *map(_fmt, row)])
            rows.append([label, "AVG", *map(_fmt, agg.allocation.mean(axis=0))])
        written.append(_write_csv(
            out / "allocation_heatmap.csv", "allocation_heatmap", meta(any_agg),
            ["label", "iteration", *any_agg.site_names], rows,
        ))

        if target is not None:
            census = marginals_of_joint(target)
            rows = []
            for label, agg in battery.items():
                for a, (name, cats) in enumerate(target.schema.attributes):
                    for c, cat in enumerate(cats):
                        rows.append([label, name, cat, _fmt(census.vectors[a][c]), _fmt(agg.marginals[name][c])])
            written.append(_write_csv(
                out / "subgroup_proportions.csv", "subgroup_proportions", meta(any_agg),
                ["label", "attribute", "category", "census", "cohort"], rows,
            ))

    if sweeps:
        rows = []
        for label, points in sweeps.items():
            for value, agg in sorted(points.items()):
                for metric in (m.value for m in DistanceMetric):
                    lo, mean, hi = agg.final_interval(metric)
                    rows.append([label, _fmt(value), metric, _fmt(mean), _fmt(lo), _fmt(hi), agg.replicates])
        first = next(iter(next(iter(sweeps.values())).values()))
        written.append(_write_csv(
            out / "sweep.csv", "sweep", {**meta(first), "axis": axis},
            ["label", "value", "metric", "mean", "lower", "upper", "replicates"], rows,
        ))
    return written


def write_aggregates(path, battery=None, sweeps=None, *, axis=None, manifest_hash=None) -> None:
    doc = {
        "schema_version": f"recruitsim.aggregates/{REPORT_VERSION}",
        "manifest": manifest_hash,
        "axis": axis,
        # pairs rather than an object so strategy order survives sort_keys
        "battery": [[k, v.to_dict()] for k, v in (battery or {}).items()],
        "sweeps": {
            k: [[value, agg.to_dict()] for value, agg in sorted(points.items())]
            for k, points in (sweeps or {}).items()
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def read_aggregates(path) -> dict:
    doc = json.loads(Path(path).read_text())
    return {
        "manifest": doc.get("manifest"),
        "axis": doc.get("axis"),
        "battery": {k: AggregateResult.from_dict(v) for k, v in doc["battery"]},
        "sweeps": {
            k: {float(value): AggregateResult.from_dict(agg) for value, agg in points}
            for k, points in doc["sweeps"].items()
        },
    }
