"""Command line: parhyp run | sweep | verify."""
from __future__ import annotations

import logging
import os
import sys
from pathlib import Path

import click

from .analysis import convergence_study, energy_ledger
from .config import ConfigError, LoadedConfig, dump_config, load_config
from .spatial import assemble_operators
from .stepper import AdmissibilityError, SolverError, advance_trajectory
from .storage import write_rate_table, write_trajectory
from .verification import run_suite

EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 1, 2, 3


def _setup_logging() -> None:
    level = os.environ.get("PARHYP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _load(config_arg, config_opt, out, seed) -> LoadedConfig:
    path = config_opt or config_arg
    if path is None:
        raise click.UsageError("a config file is required (positional or --config)")
    try:
        loaded = load_config(path)
    except (ConfigError, AdmissibilityError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    if out is not None:
        loaded.run.output = str(out)
        loaded.run.normalized["output"] = str(out)
    if seed is not None:
        loaded.run.seed = seed
        loaded.run.normalized["seed"] = seed
    return loaded


def _common(fn):
    fn = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Seed for randomized diagnostics.")(fn)
    fn = click.option("--threads", type=click.IntRange(1), default=1, show_default=True, help="Concurrent sweep members.")(fn)
    fn = click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")(fn)
    fn = click.option("--config", "config_opt", type=click.Path(dir_okay=False), default=None, help="Config JSON.")(fn)
    fn = click.argument("config_arg", required=False, type=click.Path(dir_okay=False))(fn)
    return fn


@click.group()
def main() -> None:
    """Implicit time stepping for the coupled heat / damped-wave phase-field system."""
    _setup_logging()


@main.command()
@_common
def run(config_arg, config_opt, out, threads, seed):
    """Compute one trajectory and write CSVs plus a manifest."""
    instance, scheme, settings = _load(config_arg, config_opt, out, seed)
    ops = assemble_operators(instance)
    try:
        traj = advance_trajectory(instance, scheme, ops)
    except SolverError as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    ledger = energy_ledger(traj, ops)
    path = write_trajectory(traj, settings.output, settings.normalized, ledger.bounded_summary())
    kappa = traj.reports[0].kappa if traj.reports else 0.0
    worst = max((r.max_ratio for r in traj.reports), default=0.0)
    click.echo(f"N={traj.N} h={traj.h:.6g} kappa={kappa:.6g} max_ratio={worst:.6g}")
    click.echo(f"wrote {path}")


@main.command()
@_common
def sweep(config_arg, config_opt, out, threads, seed):
    """Convergence study over N_list against an N_ref reference."""
    instance, scheme, settings = _load(config_arg, config_opt, out, seed)
    try:
        report = convergence_study(instance, settings.N_list, settings.N_ref, scheme, threads=threads)
    except SolverError as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    outdir = Path(settings.output)
    outdir.mkdir(parents=True, exist_ok=True)
    write_rate_table(report.rows(), outdir / "rates.csv")
    dump_config(LoadedConfig(instance, scheme, settings), outdir / "config.json")
    for row in report.rows():
        click.echo(f"N={row['N']:5d} h={row['h']:.4e} composite={row['composite']:.4e} M={row['M']:.4e}")
    slope = "degenerate" if report.slope is None else f"{report.slope:.4f}"
    click.echo(f"slope {slope}")
    click.echo(f"M spread {report.M_spread:.3f}")


@main.command()
@_common
def verify(config_arg, config_opt, out, threads, seed):
    """Run the invariant suite; exit 3 at the first failure."""
    instance, scheme, settings = _load(config_arg, config_opt, out, seed)
    try:
        reports = run_suite(instance, scheme, seed=settings.seed)
    except SolverError as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    for rep in reports:
        click.echo(rep.line())
    failed = [r for r in reports if not r.passed]
    if failed:
        click.echo(f"first failure: {failed[0].label}", err=True)
        sys.exit(EXIT_VERIFY)
    click.echo(f"all {len(reports)} checks passed")


if __name__ == "__main__":
    main()
