"""Command-line interface: ingest, simulate, battery, sweep, report.

Experiments are described by a TOML manifest; command-line flags override
manifest fields and the COHORT_SEED environment variable overrides seeds.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import tomli

from . import __version__
from .demographics import (
    SchemaError,
    load_table,
    read_site_bundle,
    write_site_bundle,
)
from .experiments import (
    DEFAULT_KAPPA_GRID,
    DEFAULT_LAMBDA_GRID,
    ExperimentSpec,
    ReplicateError,
    export_report,
    grid,
    read_aggregates,
    run_replicates,
    sweep,
    write_aggregates,
)
from .metrics import kl_divergence
from .policy import SolverConfig
from .simulator import SimulationConfig, run_simulation

log = logging.getLogger("recruitsim")

SIM_FIELDS = {f.name for f in fields(SimulationConfig)} - {"solver"}
SOLVER_FIELDS = {f.name for f in fields(SolverConfig)}


@dataclass
class RunManifest:
    base_dir: Path
    data: dict = field(default_factory=dict)
    simulation: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)
    strategies: list = field(default_factory=list)
    output_dir: str = "out"
    digest: str = ""

    @classmethod
    def load(cls, path) -> "RunManifest":
        if path is None:
            return cls(base_dir=Path.cwd(), digest=hashlib.sha256(b"").hexdigest()[:16])
        path = Path(path)
        raw = path.read_bytes()
        try:
            doc = tomli.loads(raw.decode())
        except tomli.TOMLDecodeError as exc:
            raise SchemaError(f"{path}: {exc}") from None
        unknown = set(doc) - {"data", "simulation", "solver", "experiment", "strategy", "output_dir"}
        if unknown:
            raise SchemaError(f"{path}: unknown sections {sorted(unknown)}")
        m = cls(
            base_dir=path.parent,
            data=doc.get("data", {}),
            simulation=doc.get("simulation", {}),
            solver=doc.get("solver", {}),
            experiment=doc.get("experiment", {}),
            strategies=doc.get("strategy", []),
            output_dir=doc.get("output_dir", "out"),
            digest=hashlib.sha256(raw).hexdigest()[:16],
        )
        m.validate()
        return m

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def validate(self) -> None:
        for key in ("bundle", "ratio_csv", "census_csv"):
            if key in self.data and not self.resolve(self.data[key]).is_file():
                raise SchemaError(f"manifest data.{key}: {self.resolve(self.data[key])} not found")
        bad = set(self.simulation) - SIM_FIELDS
        if bad:
            raise SchemaError(f"manifest [simulation] has unknown keys {sorted(bad)}")
        bad = set(self.solver) - SOLVER_FIELDS
        if bad:
            raise SchemaError(f"manifest [solver] has unknown keys {sorted(bad)}")
        for s in self.strategies:
            bad = set(s) - SIM_FIELDS - {"label"}
            if bad:
                raise SchemaError(f"manifest strategy {s.get('label')!r} has unknown keys {sorted(bad)}")

    def world(self):
        if "bundle" in self.data:
            return read_site_bundle(self.resolve(self.data["bundle"]))
        ratio = self.data.get("ratio_csv")
        census = self.data.get("census_csv")
        table = load_table(
            self.resolve(ratio) if ratio else None, self.resolve(census) if census else None
        )
        return table.sites(), table.target()


def _seed_override():
    value = os.environ.get("COHORT_SEED")
    return int(value) if value not in (None, "") else None


def _base_config(manifest: RunManifest, args) -> SimulationConfig:
    sim = dict(manifest.simulation)
    for key in ("policy", "prior", "metric", "seed", "lam", "kappa", "n_total", "iterations", "prior_mass"):
        value = getattr(args, key, None)
        if value is not None:
            sim[key] = value
    env_seed = _seed_override()
    if env_seed is not None:
        sim["seed"] = env_seed
    return SimulationConfig(**sim, solver=SolverConfig(**manifest.solver))


def _strategies(manifest: RunManifest, base: SimulationConfig, args) -> dict[str, SimulationConfig]:
    entries = manifest.strategies
    if getattr(args, "policy", None) or not entries:
        return {f"{base.policy.value}-{base.prior.value}": base}
    out = {}
    for s in entries:
        s = dict(s)
        label = s.pop("label", None) or f"{s.get('policy', base.policy.value)}-{s.get('prior', base.prior.value)}"
        if label in out:
            raise SchemaError(f"duplicate strategy label {label!r}")
        out[label] = replace(base, **s)
    return out


def _experiment(manifest: RunManifest, args) -> dict:
    exp = dict(manifest.experiment)
    for key in ("replicates", "base_seed", "axis"):
        value = getattr(args, key, None)
        if value is not None:
            exp[key] = value
    env_seed = _seed_override()
    if env_seed is not None:
        exp["base_seed"] = env_seed
    return exp


def _out_dir(manifest: RunManifest, args) -> Path:
    return Path(args.out) if getattr(args, "out", None) else manifest.resolve(manifest.output_dir)


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    table = load_table(args.ratios, args.census)
    sites, target = table.sites(), table.target()
    write_site_bundle(args.out, sites, target)
    for s in sites:
        print(f"{s.name}\tMKLD={kl_divergence(s.response.probs, target.probs):.4f}")
    print(f"wrote {len(sites)} sites and the target to {args.out}")
    return 0


def cmd_simulate(args) -> int:
    manifest = RunManifest.load(args.manifest)
    config = _base_config(manifest, args)
    sites, target = manifest.world()
    result = run_simulation(config, sites, target)
    out = _out_dir(manifest, args)
    out.mkdir(parents=True, exist_ok=True)
    doc = result.to_dict()
    doc["manifest"] = manifest.digest
    (out / "result.json").write_text(json.dumps(doc, sort_keys=True) + "\n")
    csv_text = result.to_csv().replace("# ", f"# manifest={manifest.digest} ", 1)
    (out / "result.csv").write_text(csv_text)
    final = result.final_distances
    print(
        f"{config.policy.value}/{config.prior.value} seed={config.seed}: final "
        + " ".join(f"{k}={v:.4f}" for k, v in final.items())
    )
    return 0


def cmd_battery(args) -> int:
    manifest = RunManifest.load(args.manifest)
    base = _base_config(manifest, args)
    exp = _experiment(manifest, args)
    sites, target = manifest.world()
    battery = {}
    for label, config in _strategies(manifest, base, args).items():
        spec = ExperimentSpec(
            base=config,
            replicates=int(exp.get("replicates", 100)),
            base_seed=int(exp.get("base_seed", 0)),
            label=label,
        )
        agg = run_replicates(spec, sites, target, jobs=args.jobs)
        battery[label] = agg
        lo, mean, hi = agg.final_interval(base.metric)
        print(f"{label}: final {base.metric.value} {mean:.4f} [95% CI {lo:.4f}, {hi:.4f}]")
    out = _out_dir(manifest, args)
    out.mkdir(parents=True, exist_ok=True)
    write_aggregates(out / "aggregates.json", battery, manifest_hash=manifest.digest)
    export_report(out, battery, target=target, manifest_hash=manifest.digest)
    return 0


def cmd_sweep(args) -> int:
    manifest = RunManifest.load(args.manifest)
    base = _base_config(manifest, args)
    exp = _experiment(manifest, args)
    axis = exp.get("axis", "none")
    if axis == "none":
        raise SchemaError("sweep needs an axis: set experiment.axis or pass --axis")
    if args.grid:
        points = grid(*args.grid)
    elif "points" in exp:
        points = [float(v) for v in exp["points"]]
    else:
        points = grid(*exp.get("grid", DEFAULT_LAMBDA_GRID if axis == "lam" else DEFAULT_KAPPA_GRID))
    sites, target = manifest.world()
    sweeps = {}
    for label, config in _strategies(manifest, base, args).items():
        spec = ExperimentSpec(
            base=config,
            replicates=int(exp.get("replicates", 100)),
            base_seed=int(exp.get("base_seed", 0)),
            axis=axis,
            label=label,
        )
        sweeps[label] = sweep(spec, points, sites, target, jobs=args.jobs)
        for value, agg in sweeps[label].items():
            lo, mean, hi = agg.final_interval(base.metric)
            print(f"{label} {axis}={value:g}: final {mean:.4f} [{lo:.4f}, {hi:.4f}]")
    out = _out_dir(manifest, args)
    out.mkdir(parents=True, exist_ok=True)
    write_aggregates(out / "aggregates.json", sweeps=sweeps, axis=axis, manifest_hash=manifest.digest)
    export_report(out, sweeps=sweeps, axis=axis, manifest_hash=manifest.digest)
    return 0


def cmd_report(args) -> int:
    doc = read_aggregates(args.aggregates)
    target = None
    if args.manifest:
        _, target = RunManifest.load(args.manifest).world()
    elif doc["battery"]:
        target = load_table().target()
    paths = export_report(
        args.out,
        doc["battery"] or None,
        doc["sweeps"] or None,
        target=target,
        axis=doc["axis"],
        manifest_hash=doc["manifest"],
    )
    for p in paths:
        print(p)
    return 0


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("manifest", nargs="?", help="TOML run manifest")
    p.add_argument("--out", help="output directory (overrides manifest output_dir)")
    p.add_argument("--policy", choices=["random_site", "uniform", "informed_static", "thompson", "adaptive"])
    p.add_argument("--prior", choices=["uninformed", "empiric", "informed"])
    p.add_argument("--metric", choices=["mkld", "ukld", "ds"])
    p.add_argument("--seed", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--n-total", dest="n_total", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--prior-mass", dest="prior_mass", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recruitsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build site and target joints from a ratio table")
    p.add_argument("--ratios", help="ratio CSV (default: bundled site table)")
    p.add_argument("--census", help="census CSV overriding the ratio table's census column")
    p.add_argument("--out", required=True, help="output JSON bundle")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("simulate", help="one seeded run")
    _add_overrides(p)
    p.set_defaults(func=cmd_simulate)

    for name, func, text in (("battery", cmd_battery, "replicate battery per strategy"), ("sweep", cmd_sweep, "lam/kappa sweep")):
        p = sub.add_parser(name, help=text)
        _add_overrides(p)
        p.add_argument("--replicates", type=int)
        p.add_argument("--base-seed", dest="base_seed", type=int)
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        if name == "sweep":
            p.add_argument("--axis", choices=["lam", "kappa"])
            p.add_argument("--grid", type=float, nargs=3, metavar=("START", "STOP", "STEP"))
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="re-export CSV reports from aggregates.json")
    p.add_argument("aggregates")
    p.add_argument("--manifest", help="manifest whose data defines the target")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (SchemaError, ValueError, OSError, ReplicateError) as exc:
        print(f"recruitsim {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
