"""Command-line entry point.

    gridbso bench --filters ekf,pf:500,bso:500 --runs 100 --seed 42 --out results
    gridbso demo --seed 7 --out demo
    gridbso dump-posterior --cells 500 --seed 7 --out posteriors

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bench
from .bench import BenchConfig, FilterSpec
from .grid import write_csv
from .model import model_names

THREADS_ENV = "GRIDBSO_THREADS"
DEFAULT_FILTERS = "ekf,pf:500,bso:500"


@dataclass(frozen=True)
class CliConfig:
    command: str
    bench: BenchConfig
    out: Path
    serial: bool = False
    seed_drawn: bool = False
    run: int = 0
    quiet: bool = False


def build_parser():
    p = argparse.ArgumentParser(prog="gridbso",
                                description="Grid-based Bayesian state observer benchmark")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--filters", help=f"comma list of ekf, pf:N, bso:N (default {DEFAULT_FILTERS})")
        sp.add_argument("--model", choices=model_names())
        sp.add_argument("--horizon", type=int, help="steps per run (default 100)")
        sp.add_argument("--seed", type=int, help="master seed; drawn from entropy if omitted")
        sp.add_argument("--grid-lower", type=float)
        sp.add_argument("--grid-upper", type=float)
        sp.add_argument("--samples", type=int, help="MCMC samples per prediction (default 20000)")
        sp.add_argument("--burn-in", type=int)
        sp.add_argument("--thinning", type=int)
        sp.add_argument("--proposal-std", type=float,
                        help="fixed random-walk step; default scales with the posterior spread")
        sp.add_argument("--proposal-scale", type=float)
        sp.add_argument("--chains", type=int)
        sp.add_argument("--kernel", choices=["gaussian", "epanechnikov"])
        sp.add_argument("--bandwidth-rule", choices=["fixed", "scott", "silverman"])
        sp.add_argument("--bandwidth", type=float, help="kernel variance for --bandwidth-rule fixed")
        sp.add_argument("--bso-estimate", choices=["map", "mean"])
        sp.add_argument("--threads", type=int,
                        help=f"worker threads inside a filter (env {THREADS_ENV}; default: all cores)")
        sp.add_argument("--jobs", type=int, help="worker processes for independent runs")
        sp.add_argument("--serial", action="store_true",
                        help="one thread, one process: use for timing comparisons")
        sp.add_argument("--manifest", type=Path,
                        help="re-use the configuration stored in a manifest.json")
        sp.add_argument("--out", type=Path, required=True, help="output directory")
        sp.add_argument("--quiet", action="store_true")

    b = sub.add_parser("bench", help="Monte Carlo comparison over many runs")
    common(b)
    b.add_argument("--runs", type=int, help="number of runs (default 100)")
    d = sub.add_parser("demo", help="one run with all filters, trajectory CSV")
    common(d)
    d.add_argument("--run", type=int, default=0, help="run index (selects the realization)")
    dp = sub.add_parser("dump-posterior", help="BSO posterior on the grid at every step")
    common(dp)
    dp.add_argument("--cells", type=int, default=500)
    dp.add_argument("--run", type=int, default=0)
    return p


_FIELD_FOR_ARG = {
    "model": "model", "horizon": "horizon", "grid_lower": "grid_lower",
    "grid_upper": "grid_upper", "samples": "n_samples", "burn_in": "burn_in",
    "thinning": "thinning", "proposal_std": "proposal_std",
    "proposal_scale": "proposal_scale", "chains": "chains", "kernel": "kernel",
    "bandwidth_rule": "bandwidth_rule", "bandwidth": "bandwidth",
    "bso_estimate": "bso_estimate", "runs": "n_runs", "jobs": "jobs",
}


def _default_threads(env):
    raw = env.get(THREADS_ENV)
    if raw:
        return int(raw)
    return os.cpu_count() or 1


def parse_and_validate(argv, env=None):
    """Parse ``argv`` into a :class:`CliConfig`, reporting every problem at once."""
    env = os.environ if env is None else env
    parser = build_parser()
    args = parser.parse_args(argv)
    errors = []

    base = {}
    if args.manifest is not None:
        try:
            base = bench.read_manifest(args.manifest).to_dict()
        except (OSError, ValueError, KeyError) as exc:
            errors.append(f"cannot read manifest {args.manifest}: {exc}")
    for arg, fld in _FIELD_FOR_ARG.items():
        val = getattr(args, arg, None)
        if val is not None:
            base[fld] = val

    filters_text = args.filters
    if args.command == "dump-posterior":
        filters_text = f"bso:{args.cells}"
    elif filters_text is None and "filters" not in base:
        filters_text = DEFAULT_FILTERS
    if filters_text is not None:
        try:
            base["filters"] = tuple(FilterSpec.parse(t) for t in filters_text.split(",") if t.strip())
        except ValueError as exc:
            errors.append(str(exc))
        else:
            if not base["filters"] and args.command != "bench":
                errors.append("--filters selects no filter")

    seed_drawn = False
    if args.seed is not None:
        base["seed"] = args.seed
    elif "seed" not in base:
        base["seed"] = int(np.random.SeedSequence().entropy)
        seed_drawn = True

    try:
        threads = args.threads if args.threads is not None else (
            base["threads"] if args.manifest is not None and "threads" in base
            else _default_threads(env))
    except ValueError:
        errors.append(f"{THREADS_ENV} must be an integer")
        threads = 1
    base["threads"] = threads
    if args.serial:
        base["threads"] = 1
        base["jobs"] = 1

    checks = [
        ("n_runs", lambda v: v >= 1, "--runs must be at least 1"),
        ("horizon", lambda v: v >= 1, "--horizon must be at least 1"),
        ("n_samples", lambda v: v >= 100, "--samples must be at least 100"),
        ("burn_in", lambda v: v is None or v >= 0, "--burn-in must be nonnegative"),
        ("thinning", lambda v: v >= 1, "--thinning must be at least 1"),
        ("chains", lambda v: v >= 1, "--chains must be at least 1"),
        ("threads", lambda v: v >= 1, "--threads must be at least 1"),
        ("jobs", lambda v: v >= 1, "--jobs must be at least 1"),
        ("proposal_std", lambda v: v is None or v > 0, "--proposal-std must be positive"),
        ("proposal_scale", lambda v: v > 0, "--proposal-scale must be positive"),
    ]
    for fld, ok, msg in checks:
        if fld in base and not ok(base[fld]):
            errors.append(msg)
    lo = base.get("grid_lower", BenchConfig.grid_lower)
    hi = base.get("grid_upper", BenchConfig.grid_upper)
    if not lo < hi:
        errors.append("--grid-lower must be below --grid-upper")
    if base.get("bandwidth_rule") == "fixed" and not (base.get("bandwidth") or 0) > 0:
        errors.append("--bandwidth-rule fixed needs a positive --bandwidth")
    if args.command == "dump-posterior" and args.cells < 2:
        errors.append("--cells must be at least 2")
    run = getattr(args, "run", 0)
    if run < 0:
        errors.append("--run must be nonnegative")
    if args.command != "bench":
        base["n_runs"] = max(run + 1, 1)

    cfg = None
    if not errors:
        try:
            cfg = BenchConfig(**base)
            for spec in cfg.filters:
                if spec.kind == "bso":
                    cfg.bso_config(spec.cells)
        except (ValueError, TypeError) as exc:
            errors.append(str(exc))
    if errors:
        parser.error("; ".join(errors))
    return CliConfig(command=args.command, bench=cfg, out=args.out, serial=args.serial,
                     seed_drawn=seed_drawn, run=run, quiet=args.quiet)


def _log(cli, msg):
    if not cli.quiet:
        print(msg, file=sys.stderr)


def _run_bench(cli):
    cfg = cli.bench
    done = []

    def progress(rec):
        done.append(rec.run)
        _log(cli, f"run {len(done)}/{cfg.n_runs} done")

    report = bench.run_benchmark(cfg, progress=progress)
    bench.emit_report(report, cli.out)
    for s in report.summary:
        _log(cli, ",".join(s.row()))
    return report


def _run_demo(cli):
    cfg = dataclasses.replace(cli.bench, n_runs=1)
    rec = bench.run_single(cfg, cli.run)
    report = bench.BenchmarkReport(cfg, [rec], bench.summarize(cfg, [rec]))
    cli.out.mkdir(parents=True, exist_ok=True)
    labels = [f.label for f in cfg.filters]
    bench.write_trajectory(rec, labels, cli.out / "trajectory.csv")
    bench.write_summary(report.summary, cli.out / "summary.csv")
    bench.write_manifest(report, cli.out / "manifest.json", extra={"run": cli.run})
    return report


def _run_dump(cli):
    cfg = dataclasses.replace(cli.bench, n_runs=1)
    post_dir = cli.out / "posteriors"
    post_dir.mkdir(parents=True, exist_ok=True)

    def on_posterior(label, k, pdf):
        write_csv(pdf, post_dir / f"step_{k}.csv")

    rec = bench.run_single(cfg, cli.run, on_posterior=on_posterior)
    report = bench.BenchmarkReport(cfg, [rec], bench.summarize(cfg, [rec]))
    bench.write_trajectory(rec, [f.label for f in cfg.filters], cli.out / "trajectory.csv")
    bench.write_manifest(report, cli.out / "manifest.json", extra={"run": cli.run})
    return report


def main(argv=None):
    cli = parse_and_validate(sys.argv[1:] if argv is None else argv)
    if cli.seed_drawn:
        _log(cli, f"seed {cli.bench.seed} (recorded in manifest)")
    try:
        if cli.command == "bench":
            _run_bench(cli)
        elif cli.command == "demo":
            _run_demo(cli)
        else:
            _run_dump(cli)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"gridbso: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
