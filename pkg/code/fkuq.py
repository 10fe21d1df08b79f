"""
fk-connectome-uq Command-Line Pipeline
======================================

Single entry point for the connectome Fisher-Kolmogorov workflow:
synthetic data -> simulation -> MCMC calibration -> forward UQ (MC / sparse
grids) -> convergence studies -> report tables.

Every run writes a manifest next to its main output. The manifest holds the
settings under their flag names plus SHA-256 hashes of inputs, code and
outputs, and can be fed back through --config to reproduce the run.

Usage:
    python code/fkuq.py gen-synthetic --out data/graphs/synthetic.json --seed 42
    python code/fkuq.py calibrate --graph data/graphs/synthetic.json \\
        --scan1 data/graphs/synthetic_scan1.csv --scan2 data/graphs/synthetic_scan2.csv \\
        --already-scaled --steps 100000 --burn-in 10000 --out results/runs/posterior.json
    python code/fkuq.py uq-sc --graph data/graphs/synthetic.json --posterior results/runs/posterior.json \\
        --c0 data/graphs/synthetic_scan2.csv --already-scaled --level 5 --out results/runs/sc.csv
    python code/fkuq.py uq-mc ... --samples 10000 --out results/runs/mc.csv
    python code/fkuq.py report --moments results/runs/sc.csv --plots --out-dir results/reports
    python code/fkuq.py replay --manifest results/runs/sc.manifest.json

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

sys.path.insert(0, str(Path(__file__).parent))

import numpy as np
from rich.table import Table

from config_paths import (
    CODE_DIR,
    CONSOLE,
    DEFAULT_SEED,
    DEFAULT_THREADS,
    GRAPHS_DIR,
    REPORTS_DIR,
    RUNS_DIR,
    banner,
    set_quiet,
)
from connectome import (
    DEFAULT_CONNECTOGRAM_FRACTION,
    DEFAULT_OUTLIER_TOL,
    SyntheticSpec,
    filter_outlier_nodes,
    generate_synthetic,
    load_connectome,
    load_scan,
    project_scan_pair,
    read_scan_values,
    save_connectome,
    save_scan,
)
from errors import NumericalError, ValidationError
from field import (
    PosteriorSummary,
    PriorBounds,
    as_parameter_vector,
    assemble_reaction_vector,
    load_field_json,
    load_posterior,
    load_prior_bounds,
    reference_posterior,
    reference_prior_bounds,
    save_field_json,
)
from forward_mc import REPORT_TIMES, MomentSeries, mc_convergence, mc_estimate
from mcmc import (
    McmcConfig,
    effective_sample_size,
    make_calibration_model,
    posterior_summary,
    run_mcmc,
)
from qoi import QoIModel, regional_averages
from report import build_report
from solver import CALIBRATION_DT, FORWARD_DT, SolverConfig, solve_trajectory
from sparse_grid import (
    KnotRule,
    collocation_point_counts,
    grid_for_posterior,
    sc_convergence,
    sc_moments,
)

__version__ = "0.1.0"

RULE_FAMILIES = {"leja": "weighted-leja", "gauss-hermite": "gauss-hermite"}
INPUT_KEYS = ("graph", "scan1", "scan2", "c0", "prior", "posterior", "params",
              "reference", "chain", "moments", "convergence")
# Settings that never enter a manifest
RUNTIME_KEYS = ("config", "quiet", "handler", "manifest")

# ==============================================================================
# RUN CONFIGURATION AND MANIFESTS
# ==============================================================================

def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def code_version() -> str:
    """Combined hash of the pipeline sources."""
    digest = hashlib.sha256()
    for path in sorted(CODE_DIR.glob("*.py")):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    settings: dict[str, Any]
    inputs: dict[str, Path] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for key, path in self.inputs.items():
            if not Path(path).exists():
                raise FileNotFoundError(f"--{key.replace('_', '-')}: {path} does not exist")

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        settings = {
            k: v for k, v in sorted(vars(args).items())
            if k not in RUNTIME_KEYS and k != "subcommand"
        }
        inputs = {k: Path(settings[k]) for k in INPUT_KEYS if settings.get(k)}
        return cls(subcommand=args.subcommand, settings=settings, inputs=inputs)

    def write_manifest(self, path: Path, outputs: list[Path]) -> Path:
        manifest = {"subcommand": self.subcommand}
        manifest.update({k: (str(v) if isinstance(v, Path) else v) for k, v in self.settings.items()})
        manifest["_provenance"] = {
            "version": __version__,
            "code_sha256": code_version(),
            "inputs_sha256": {k: sha256_file(p) for k, p in self.inputs.items()},
            "outputs_sha256": {Path(p).name: sha256_file(Path(p)) for p in outputs},
        }
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=False)
            f.write("\n")
        return path


def apply_config(args: argparse.Namespace) -> argparse.Namespace:
    """Values from --config JSON override command-line flags."""
    if not getattr(args, "config", None):
        return args
    path = Path(args.config)
    if not path.exists():
        raise FileNotFoundError(f"Missing config file: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"parse failure in {path.name}: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{path.name}: top level must be an object")
    subcommand = data.get("subcommand")
    if subcommand is not None and subcommand != args.subcommand:
        raise ValidationError(f"{path.name} belongs to '{subcommand}', not '{args.subcommand}'")
    for key, value in data.items():
        if key.startswith("_") or key == "subcommand":
            continue
        if key in RUNTIME_KEYS or not hasattr(args, key):
            raise ValidationError(f"{path.name}: unknown setting '{key}' for {args.subcommand}")
        setattr(args, key, value)
    return args


def manifest_path(out: Path) -> Path:
    return out.with_name(f"{out.stem}.manifest.json")


def companion(out: Path, suffix: str) -> Path:
    """Secondary output next to the main one: moments.csv -> moments_grid.csv."""
    return out.with_name(f"{out.stem}_{suffix}")


def finish(args: argparse.Namespace, out: Path, outputs: list[Path]) -> int:
    run_cfg = RunConfig.from_args(args)
    written = run_cfg.write_manifest(manifest_path(out), outputs)
    for path in outputs:
        CONSOLE.print(f"  ✓ Saved: {path}")
    CONSOLE.print(f"  ✓ Manifest: {written}")
    CONSOLE.print("=" * 72)
    return 0

# ==============================================================================
# ARGUMENT HELPERS
# ==============================================================================

def require(args: argparse.Namespace, *keys: str) -> None:
    missing = [f"--{k.replace('_', '-')}" for k in keys if getattr(args, k, None) in (None, "")]
    if missing:
        raise ValidationError(f"missing required setting(s) {', '.join(missing)}")


def parse_float_list(text: str | list, name: str) -> list[float]:
    if isinstance(text, list):
        return [float(x) for x in text]
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"--{name}: expected comma-separated numbers, got {text!r}") from None


def parse_int_list(text: str | list, name: str) -> list[int]:
    """'100,1000' or '3..8' (inclusive range)."""
    if isinstance(text, list):
        return [int(x) for x in text]
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ValidationError(f"--{name}: expected '3..8' or '100,1000', got {text!r}") from None


def knot_rule(args: argparse.Namespace) -> KnotRule:
    if args.rule not in RULE_FAMILIES:
        raise ValidationError(f"--rule must be one of {sorted(RULE_FAMILIES)}, got {args.rule!r}")
    return KnotRule(RULE_FAMILIES[args.rule], args.lev2knots)


def forward_model(args: argparse.Namespace) -> tuple[QoIModel, PosteriorSummary]:
    """Graph + initial condition + solver settings -> (QoIModel, posterior)."""
    require(args, "graph", "posterior", "c0")
    g = load_connectome(args.graph)
    c0 = load_scan(args.c0, g, already_scaled=args.already_scaled)
    times = tuple(parse_float_list(args.times, "times")) if args.times else (float(args.T),)
    cfg = SolverConfig(dt=float(args.dt), T=float(args.T), sample_times=times)
    post = load_posterior(args.posterior)
    if post.dimension != g.region_count:
        raise ValidationError(
            f"posterior has {post.dimension} components, graph has {g.region_count} regions"
        )
    if args.variance_scale != 1.0:
        post = post.with_variance_scale(float(args.variance_scale))
    return QoIModel(g, c0, cfg, normalization=args.normalization), post

# ==============================================================================
# SUBCOMMANDS
# ==============================================================================

def cmd_gen_synthetic(args: argparse.Namespace) -> int:
    banner("FKUQ GEN-SYNTHETIC")
    out = Path(args.out)
    spec = SyntheticSpec(
        nodes_per_region=(int(args.nodes_per_region),) * int(args.regions),
        intra_density=float(args.intra),
        inter_density=float(args.inter),
        weight_scale=float(args.weight_scale),
    )
    g = generate_synthetic(spec, seed=int(args.seed))
    CONSOLE.print(f"  ✓ {g.num_nodes:,} nodes, {g.num_edges:,} edges, {g.region_count} regions")

    rng = np.random.default_rng([int(args.seed), 1])
    c0 = rng.uniform(float(args.c0_low), float(args.c0_high), size=g.num_nodes)
    if g.region_count == 7:
        bounds, truth = reference_prior_bounds(), reference_posterior().mu
    else:
        bounds = PriorBounds(a=np.full(g.region_count, -0.2), b=np.full(g.region_count, 0.45))
        truth = bounds.midpoint

    cfg = SolverConfig(dt=float(args.dt), T=float(args.horizon), sample_times=(float(args.horizon),))
    c_end = solve_trajectory(g, assemble_reaction_vector(g, truth), c0, cfg).final
    if args.noise > 0:
        c_end = c_end + rng.normal(0.0, float(args.noise), size=c_end.size)
    c_end = np.clip(c_end, 0.0, 1.0)

    outputs = [
        save_connectome(g, out),
        save_scan(c0, companion(out, "scan1.csv")),
        save_scan(c_end, companion(out, "scan2.csv")),
        save_field_json(
            companion(out, "truth.json"), g.region_names, bounds=bounds,
            posterior=PosteriorSummary(mu=truth, var=np.zeros(truth.size)),
        ),
    ]
    return finish(args, out, outputs)


def cmd_simulate(args: argparse.Namespace) -> int:
    banner("FKUQ SIMULATE")
    require(args, "graph", "c0")
    out = Path(args.out)
    g = load_connectome(args.graph)
    c0 = load_scan(args.c0, g, already_scaled=args.already_scaled)
    if args.params:
        _, _, post = load_field_json(args.params)
        if post is None:
            raise ValidationError(f"{args.params}: no 'mu' entries to simulate with")
        p = post.mu
    elif args.p:
        p = np.array(parse_float_list(args.p, "p"))
    else:
        raise ValidationError("simulate needs --params or --p")
    p = as_parameter_vector(p, g.region_count)

    cfg = SolverConfig.every(float(args.dt), float(args.T), float(args.interval))
    model = QoIModel(g, c0, cfg, normalization=args.normalization)
    traj = solve_trajectory(g, assemble_reaction_vector(g, p), c0, cfg)
    CONSOLE.print(f"  ✓ {cfg.n_steps:,} steps, max bounds violation {traj.bounds_violation:.2e}")

    out.parent.mkdir(parents=True, exist_ok=True)
    regional = companion(out, "regional.csv")
    qoi_path = companion(out, "qoi.csv")
    traj.to_frame().to_csv(out, index=False, float_format="%.17g")
    traj.regional_frame(g).to_csv(regional, index=False, float_format="%.17g")
    model(p).to_frame().to_csv(qoi_path, index=False, float_format="%.17g")
    return finish(args, out, [out, regional, qoi_path])


def cmd_calibrate(args: argparse.Namespace) -> int:
    banner("FKUQ CALIBRATE")
    require(args, "graph", "scan1", "scan2")
    out = Path(args.out)
    g = load_connectome(args.graph)
    if args.joint_rescale:
        scan1, scan2 = project_scan_pair(
            g, read_scan_values(args.scan1, g), read_scan_values(args.scan2, g)
        )
    else:
        scan1 = load_scan(args.scan1, g, already_scaled=args.already_scaled)
        scan2 = load_scan(args.scan2, g, already_scaled=args.already_scaled)

    mask = filter_outlier_nodes(scan1, scan2, float(args.outlier_tol))
    CONSOLE.print(f"  ✓ {int((~mask).sum()):,} of {g.num_nodes:,} nodes excluded as outliers")
    if args.prior:
        bounds = load_prior_bounds(args.prior)
    elif g.region_count == 7:
        bounds = reference_prior_bounds()
    else:
        raise ValidationError(f"--prior is required for a {g.region_count}-region graph")
    if bounds.dimension != g.region_count:
        raise ValidationError(f"prior has {bounds.dimension} components, graph has {g.region_count} regions")

    q_data = regional_averages(g, scan2, mask, args.normalization)
    model = make_calibration_model(
        g, scan1, mask, float(args.horizon), float(args.dt), normalization=args.normalization
    )

    chain_csv = companion(out, "chain.csv")
    cfg = McmcConfig(
        bounds=bounds,
        proposal_sigma=float(args.proposal_sigma),
        likelihood_sigma=float(args.lik_sigma),
        chain_length=int(args.steps),
        burn_in=int(args.burn_in),
        seed=int(args.seed),
        horizon=float(args.horizon),
        dt=float(args.dt),
        stream_path=companion(out, "chain.npy"),
        progress=not args.quiet,
    )
    chain = run_mcmc(model, q_data, cfg)
    post = posterior_summary(chain, cfg.burn_in)
    CONSOLE.print(f"  ✓ acceptance rate {chain.acceptance_rate:.3f} ({chain.accepted_count:,} accepted)")

    table = Table(title="Posterior", show_header=True)
    for col in ("region", "mu", "var", "ESS"):
        table.add_column(col)
    kept = np.asarray(chain.samples[cfg.burn_in:])
    for l, name in enumerate(g.region_names):
        table.add_row(name, f"{post.mu[l]:.4f}", f"{post.var[l]:.4f}",
                      f"{effective_sample_size(kept[:, l]):,.0f}")
    CONSOLE.print(table)

    save_field_json(out, g.region_names, bounds=bounds, posterior=post)
    chain.to_frame().to_csv(chain_csv, index=False, float_format="%.17g")
    return finish(args, out, [out, chain_csv])


def cmd_uq_mc(args: argparse.Namespace) -> int:
    banner("FKUQ UQ-MC")
    model, post = forward_model(args)
    out = Path(args.out)
    moments = mc_estimate(model, post, int(args.samples), int(args.seed),
                          batch_size=args.batch_size, threads=int(args.threads))
    CONSOLE.print(f"  ✓ {moments.num_samples:,} samples")
    return finish(args, out, [moments.to_csv(out)])


def cmd_uq_mc_convergence(args: argparse.Namespace) -> int:
    banner("FKUQ UQ-MC-CONVERGENCE")
    require(args, "reference")
    model, post = forward_model(args)
    out = Path(args.out)
    reference = MomentSeries.from_csv(args.reference)
    result = mc_convergence(
        model, post, parse_int_list(args.counts, "counts"), reference, int(args.seed),
        replicates=int(args.replicates), batch_size=args.batch_size, threads=int(args.threads),
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    slopes = companion(out, "slopes.csv")
    result.table.to_csv(out, index=False, float_format="%.17g")
    result.slopes.to_csv(slopes, index=False, float_format="%.17g")
    CONSOLE.print(f"  ✓ mean log-log slope {result.mean_slope:.3f}")
    return finish(args, out, [out, slopes])


def cmd_uq_sc(args: argparse.Namespace) -> int:
    banner("FKUQ UQ-SC")
    model, post = forward_model(args)
    out = Path(args.out)
    grid = grid_for_posterior(post, int(args.level), knot_rule(args))
    CONSOLE.print(f"  ✓ level {args.level} {grid.rule.label}: {grid.num_points:,} collocation points")
    moments = sc_moments(model, grid, batch_size=args.batch_size, threads=int(args.threads))
    grid_csv = companion(out, "grid.csv")
    grid.to_frame().to_csv(grid_csv, index=False, float_format="%.17g")
    return finish(args, out, [moments.to_csv(out), grid_csv])


def cmd_uq_sc_convergence(args: argparse.Namespace) -> int:
    banner("FKUQ UQ-SC-CONVERGENCE")
    out = Path(args.out)
    levels = parse_int_list(args.levels, "levels")
    out.parent.mkdir(parents=True, exist_ok=True)

    if args.point_counts:
        require(args, "dimension")
        rules = [KnotRule(f, m) for f in ("weighted-leja", "gauss-hermite") for m in ("linear", "two-step")]
        counts = collocation_point_counts(int(args.dimension), levels, rules)
        table = Table(title=f"Collocation points (N = {args.dimension})", show_header=True)
        for col in counts.columns:
            table.add_column(col)
        for row in counts.itertuples(index=False):
            table.add_row(*(f"{v:,}" if isinstance(v, (int, np.integer)) else str(v) for v in row))
        CONSOLE.print(table)
        counts.to_csv(out, index=False)
        return finish(args, out, [out])

    model, post = forward_model(args)
    result = sc_convergence(
        model, post, levels, int(args.reference_level), knot_rule(args),
        batch_size=args.batch_size, threads=int(args.threads),
    )
    reference = companion(out, "reference.csv")
    result.table.to_csv(out, index=False, float_format="%.17g")
    result.reference.to_csv(reference)
    return finish(args, out, [out, reference])


def cmd_report(args: argparse.Namespace) -> int:
    banner("FKUQ REPORT")
    out_dir = Path(args.out_dir)
    graph = load_connectome(args.graph) if args.graph else None
    written = build_report(
        out_dir,
        chain_path=Path(args.chain) if args.chain else None,
        moments_path=Path(args.moments) if args.moments else None,
        convergence_path=Path(args.convergence) if args.convergence else None,
        burn_in=int(args.burn_in),
        names=list(graph.region_names) if graph is not None else None,
        bins=int(args.bins),
        plots=bool(args.plots),
        graph=graph,
        connectogram_fraction=float(args.connectogram_fraction),
    )
    return finish(args, out_dir / "report", written)


def cmd_replay(args: argparse.Namespace) -> int:
    require(args, "manifest")
    path = Path(args.manifest)
    if not path.exists():
        raise FileNotFoundError(f"Missing manifest: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            subcommand = json.load(f)["subcommand"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"{path.name} is not a run manifest: {exc}") from exc
    if subcommand == "replay":
        raise ValidationError("a replay manifest cannot be replayed")
    argv = [subcommand, "--config", str(path)] + (["--quiet"] if args.quiet else [])
    return run(argv)

# ==============================================================================
# PARSER
# ==============================================================================

def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--graph", help="connectome JSON")
    p.add_argument("--posterior", help="posterior JSON (mu/var per region)")
    p.add_argument("--c0", help="initial concentration scan CSV")
    p.add_argument("--already-scaled", action="store_true", help="scan values are already in [0, 1]")
    p.add_argument("--T", type=float, default=20.0, help="final time in years (default: 20)")
    p.add_argument("--dt", type=float, default=FORWARD_DT, help=f"time step (default: {FORWARD_DT})")
    p.add_argument("--times", default=",".join(f"{t:g}" for t in REPORT_TIMES),
                   help="report times (default: 5,10,15,20)")
    p.add_argument("--normalization", choices=("region", "total"), default="region")
    p.add_argument("--variance-scale", type=float, default=1.0,
                   help="multiply posterior variances (sensitivity runs)")
    p.add_argument("--batch-size", type=int, default=None)


def _add_rule_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rule", choices=sorted(RULE_FAMILIES), default="leja")
    p.add_argument("--lev2knots", choices=("linear", "two-step"), default="two-step")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON settings (or a run manifest) overriding flags")
    common.add_argument("--quiet", action="store_true", help="no status output")
    common.add_argument("--threads", type=int, default=DEFAULT_THREADS,
                        help="worker threads for model evaluations (env FKUQ_THREADS)")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help="random seed (env FKUQ_SEED)")

    parser = argparse.ArgumentParser(
        prog="fkuq",
        description="Fisher-Kolmogorov on connectomes: calibration and uncertainty quantification",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen-synthetic", parents=[common], help="seeded synthetic graph + scans")
    p.add_argument("--out", default=str(GRAPHS_DIR / "synthetic.json"))
    p.add_argument("--regions", type=int, default=7)
    p.add_argument("--nodes-per-region", type=int, default=6)
    p.add_argument("--intra", type=float, default=0.5)
    p.add_argument("--inter", type=float, default=0.05)
    p.add_argument("--weight-scale", type=float, default=0.05)
    p.add_argument("--c0-low", type=float, default=0.02)
    p.add_argument("--c0-high", type=float, default=0.2)
    p.add_argument("--horizon", type=float, default=7.0)
    p.add_argument("--dt", type=float, default=CALIBRATION_DT)
    p.add_argument("--noise", type=float, default=0.0, help="std of Gaussian noise on scan 2")
    p.set_defaults(handler=cmd_gen_synthetic)

    p = sub.add_parser("simulate", parents=[common], help="one forward trajectory")
    p.add_argument("--graph")
    p.add_argument("--c0")
    p.add_argument("--already-scaled", action="store_true")
    p.add_argument("--params", help="JSON whose 'mu' entries give p")
    p.add_argument("--p", help="comma-separated reaction coefficients per region")
    p.add_argument("--T", type=float, default=20.0)
    p.add_argument("--dt", type=float, default=FORWARD_DT)
    p.add_argument("--interval", type=float, default=1.0, help="recording interval (years)")
    p.add_argument("--normalization", choices=("region", "total"), default="region")
    p.add_argument("--out", default=str(RUNS_DIR / "trajectory.csv"))
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("calibrate", parents=[common], help="Metropolis-Hastings calibration")
    p.add_argument("--graph")
    p.add_argument("--scan1")
    p.add_argument("--scan2")
    p.add_argument("--already-scaled", action="store_true")
    p.add_argument("--joint-rescale", action="store_true", help="rescale both scans with one (min, max)")
    p.add_argument("--outlier-tol", type=float, default=DEFAULT_OUTLIER_TOL)
    p.add_argument("--prior", help="JSON with a/b per region (default: lobe reference box)")
    p.add_argument("--horizon", type=float, default=7.0)
    p.add_argument("--dt", type=float, default=CALIBRATION_DT)
    p.add_argument("--steps", type=int, default=100_000)
    p.add_argument("--burn-in", type=int, default=10_000)
    p.add_argument("--proposal-sigma", type=float, default=1e-2)
    p.add_argument("--lik-sigma", type=float, default=0.1)
    p.add_argument("--normalization", choices=("region", "total"), default="region")
    p.add_argument("--out", default=str(RUNS_DIR / "posterior.json"))
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser("uq-mc", parents=[common], help="Monte Carlo moments")
    _add_model_flags(p)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--out", default=str(RUNS_DIR / "mc_moments.csv"))
    p.set_defaults(handler=cmd_uq_mc)

    p = sub.add_parser("uq-mc-convergence", parents=[common], help="MC error vs sample count")
    _add_model_flags(p)
    p.add_argument("--counts", default="100,1000,10000")
    p.add_argument("--reference", help="reference moments CSV")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--out", default=str(RUNS_DIR / "mc_convergence.csv"))
    p.set_defaults(handler=cmd_uq_mc_convergence)

    p = sub.add_parser("uq-sc", parents=[common], help="sparse-grid collocation moments")
    _add_model_flags(p)
    _add_rule_flags(p)
    p.add_argument("--level", type=int, default=5)
    p.add_argument("--out", default=str(RUNS_DIR / "sc_moments.csv"))
    p.set_defaults(handler=cmd_uq_sc)

    p = sub.add_parser("uq-sc-convergence", parents=[common], help="SC error vs level")
    _add_model_flags(p)
    _add_rule_flags(p)
    p.add_argument("--levels", default="3..8")
    p.add_argument("--reference-level", type=int, default=9)
    p.add_argument("--point-counts", action="store_true",
                   help="only tabulate grid sizes for every rule (no model runs)")
    p.add_argument("--dimension", type=int, default=7, help="parameter dimension for --point-counts")
    p.add_argument("--out", default=str(RUNS_DIR / "sc_convergence.csv"))
    p.set_defaults(handler=cmd_uq_sc_convergence)

    p = sub.add_parser("report", parents=[common], help="plot-ready tables (+ PNG with --plots)")
    p.add_argument("--chain")
    p.add_argument("--moments")
    p.add_argument("--convergence")
    p.add_argument("--graph", help="connectome JSON: region names, regions.csv, connectogram.csv")
    p.add_argument("--connectogram-fraction", type=float, default=DEFAULT_CONNECTOGRAM_FRACTION)
    p.add_argument("--burn-in", type=int, default=0)
    p.add_argument("--bins", type=int, default=30)
    p.add_argument("--plots", action="store_true")
    p.add_argument("--out-dir", default=str(REPORTS_DIR))
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("replay", parents=[common], help="re-run a manifest")
    p.add_argument("--manifest")
    p.set_defaults(handler=cmd_replay)
    return parser

# ==============================================================================
# MAIN
# ==============================================================================

def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split()) or type(exc).__name__


def run(argv: list[str] | None = None) -> int:
    """Parse argv, execute one subcommand and map errors to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse usage errors are invalid input, not numerical failures
        return 0 if exc.code in (0, None) else 1
    set_quiet(bool(args.quiet))
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        args = apply_config(args)
        set_quiet(bool(args.quiet))
        return handler(args)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"fkuq: validation-error: {_one_line(exc)}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"fkuq: numerical-error: {_one_line(exc)}", file=sys.stderr)
        return 2
    except Exception as exc:
        CONSOLE.print(f"\n✗ ERROR: {exc}")
        traceback.print_exc()
        return 1


def main() -> int:
    return run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
