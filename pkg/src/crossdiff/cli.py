"""Command-line front end.

Exit codes: 0 success, 1 runtime failure (failed paths above threshold,
failed certification), 2 configuration error.
"""

from __future__ import annotations

import csv
import sys
from dataclasses import replace
from pathlib import Path

import click

from .assumptions import certify, check_coercivity
from .config import ConfigError, RunConfig, load
from .diagnostics import RunReport, coercivity_to_C1, write_json
from .grid import write_snapshots_csv
from .solver import simulate_ensemble
from .studies import grid_study, ito_strat_study, time_step_study, wong_zakai_study

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _say(quiet: bool, msg: str) -> None:
    if not quiet:
        click.echo(msg)


def _meta(cfg: RunConfig, command: str, seed: int) -> dict:
    return {"command": command, "config_sha256": cfg.sha256, "seed": seed,
            "model": cfg.model_name, "model_params": cfg.model_params}


def _stamp(cfg: RunConfig, seed: int) -> str:
    return f"config_sha256={cfg.sha256} seed={seed}"


def _load(config: str, seed: int | None, out: str | None, threads: int | None) -> RunConfig:
    cfg = load(config)
    changes = {}
    if seed is not None:
        if seed < 0 or seed >= 2**64:
            raise ConfigError("--seed: must be an unsigned 64-bit integer")
        changes["master_seed"] = seed
        changes["assumptions"] = replace(cfg.assumptions, seed=seed)
    if out is not None:
        changes["output_dir"] = Path(out)
    if threads is not None:
        if threads < 1:
            raise ConfigError("--threads: must be at least 1")
        changes["threads"] = threads
    return replace(cfg, **changes)


def run_simulate(cfg: RunConfig, out: Path, quiet: bool = True) -> tuple[int, RunReport | None]:
    model = cfg.build_model()
    u0 = cfg.initial_field(model)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.master_seed
    coer = check_coercivity(model, cfg.assumptions.sample_count, cfg.assumptions.seed)
    C1 = coercivity_to_C1(coer.c_h_empirical, model.m) if coer.passed else None
    trajs = simulate_ensemble(model, cfg.grid, cfg.solver, u0, cfg.path_count, seed,
                              threads=cfg.threads, chunk_size=cfg.chunk_size)
    failed = [t for t in trajs if t.failed]
    stamp = _stamp(cfg, seed)
    if "csv" in cfg.formats:
        for t in trajs[: cfg.trajectory_files]:
            if not t.failed:
                write_snapshots_csv(out / f"path_{t.path_id:05d}.csv", cfg.grid, t.snapshot_times,
                                    t.snapshots, stamp)
    report = None
    if len(failed) < len(trajs):
        report = RunReport.from_trajectories(trajs, C1=C1, seed=seed)
        meta = _meta(cfg, "simulate", seed)
        meta["scheme"] = cfg.solver.scheme
        meta["c_h_empirical"] = coer.c_h_empirical
        meta["failures"] = [t.failure for t in failed]
        if "json" in cfg.formats:
            report.write_json(out / "summary.json", meta)
        if "csv" in cfg.formats:
            report.write_csv(out / "series.csv", stamp)
    breach = len(failed) > cfg.max_failure_fraction * len(trajs)
    _say(quiet, f"{len(trajs) - len(failed)}/{len(trajs)} paths completed; results in {out}")
    if report is not None and report.C2_fitted is not None:
        _say(quiet, f"fitted entropy-inequality constant C2 = {report.C2_fitted:.6g}")
    if breach:
        click.echo(f"error: {len(failed)} of {len(trajs)} paths failed", err=True)
        for t in failed[:5]:
            click.echo(f"  path {t.path_id}: {t.failure}", err=True)
        return EXIT_RUNTIME, report
    return EXIT_OK, report


def run_check(cfg: RunConfig, out: Path, quiet: bool = True) -> int:
    model = cfg.build_model()
    a = cfg.assumptions
    seed = a.seed
    report = certify(model, a.sample_count, seed, a.deltas, a.kappa)
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / "assumptions.json", _meta(cfg, "check-assumptions", seed))
    report.write_decay_csv(out / "r_delta.csv", _stamp(cfg, seed))
    for flag, ok in report.pass_flags.items():
        _say(quiet, f"{flag}: {'pass' if ok else 'FAIL'}")
    if not report.passed:
        bad = [k for k, v in report.pass_flags.items() if not v]
        click.echo(f"error: certification failed for {', '.join(bad)}", err=True)
        if not report.pass_flags["A5_coercivity"]:
            click.echo(f"  coercivity witness u={report.witnesses['coercivity_u'].tolist()} "
                       f"z={report.witnesses['coercivity_z'].tolist()} "
                       f"ratio={report.c_h_empirical:.6g}", err=True)
        return EXIT_RUNTIME
    return EXIT_OK


def run_converge(cfg: RunConfig, out: Path, study: str | None = None, quiet: bool = True) -> int:
    if cfg.converge is None:
        raise ConfigError("converge: table required for the converge command")
    conv = cfg.converge
    name = study or conv.study
    model = cfg.build_model()
    seed = cfg.master_seed
    levels = list(conv.levels)
    if name == "wong-zakai":
        res = wong_zakai_study(model, cfg.grid, cfg.initial_field(model), levels, conv.path_count,
                               seed, cfg.solver, conv.reference_level)
    elif name == "ito-strat":
        res = ito_strat_study(model, cfg.grid, cfg.initial_field(model), levels, conv.path_count,
                              seed, cfg.solver)
    elif name == "time-step":
        res = time_step_study(model, cfg.grid, cfg.initial_field(model), levels, cfg.solver)
    elif name == "grid":
        if cfg.initial_profile == "csv":
            raise ConfigError("initial.profile: the grid study needs a named profile")
        res = grid_study(model, lambda g: cfg.initial_field(model, g), levels, cfg.solver,
                         cfg.grid.length)
    else:
        raise ConfigError(f"converge.study: unknown study {name!r}")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "convergence.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {_stamp(cfg, seed)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", res.parameter, "error"])
        for lvl, p, e in zip(levels, res.params, res.errors):
            w.writerow([lvl, repr(p), repr(e)])
    payload = _meta(cfg, "converge", seed)
    payload.update(res.to_dict())
    write_json(out / "fit.json", payload)
    for lvl, p, e in zip(levels, res.params, res.errors):
        _say(quiet, f"level {lvl}: {res.parameter}={p:.6g} error={e:.6g}")
    if res.fit is not None:
        _say(quiet, f"fitted order {res.fit.slope:.4f}")
    return EXIT_OK


def run_sweep(cfg: RunConfig, out: Path, quiet: bool = True) -> int:
    if cfg.sweep is None:
        raise ConfigError("sweep: table required for the sweep command")
    rows, worst = [], EXIT_OK
    for i, value in enumerate(cfg.sweep.values):
        sub = cfg.with_override(cfg.sweep.parameter, value)
        sub = replace(sub, master_seed=cfg.master_seed, threads=cfg.threads)
        code, report = run_simulate(sub, out / f"sweep_{i:03d}", quiet=True)
        worst = max(worst, code)
        rows.append([i, value, code,
                     None if report is None else report.C2_fitted,
                     None if report is None else float(report.entropy_mean[-1])])
        _say(quiet, f"{cfg.sweep.parameter}={value!r}: exit {code}")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {_stamp(cfg, cfg.master_seed)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", cfg.sweep.parameter, "exit_code", "C2_fitted", "final_entropy_mean"])
        for r in rows:
            w.writerow([r[0], repr(r[1]), r[2], "" if r[3] is None else repr(r[3]),
                        "" if r[4] is None else repr(r[4])])
    return worst


def _common(fn):
    fn = click.option("--quiet", is_flag=True, help="Suppress progress output.")(fn)
    fn = click.option("--threads", type=int, default=None, help="Worker threads.")(fn)
    fn = click.option("--out", type=click.Path(file_okay=False), default=None,
                      help="Output directory (overrides output.directory).")(fn)
    fn = click.option("--seed", type=int, default=None, help="Master seed (u64).")(fn)
    fn = click.option("--config", "config", required=True, type=click.Path(dir_okay=False),
                      help="TOML run configuration.")(fn)
    return fn


def _dispatch(body, config, seed, out, threads):
    try:
        cfg = _load(config, seed, out, threads)
        return body(cfg, cfg.output_dir)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 1
        click.echo(f"runtime error: {type(exc).__name__}: {exc}", err=True)
        return EXIT_RUNTIME


@click.group()
def cli() -> None:
    """Structure-preserving simulation of stochastic cross-diffusion systems."""


@cli.command()
@_common
def simulate(config, seed, out, threads, quiet):
    """Run a Monte Carlo ensemble and write trajectories and summaries."""
    sys.exit(_dispatch(lambda c, o: run_simulate(c, o, quiet)[0], config, seed, out, threads))


@cli.command("check-assumptions")
@_common
def check_assumptions(config, seed, out, threads, quiet):
    """Certify the structural assumptions of the configured model."""
    sys.exit(_dispatch(lambda c, o: run_check(c, o, quiet), config, seed, out, threads))


@cli.command()
@_common
@click.option("--study", type=click.Choice(["wong-zakai", "ito-strat", "time-step", "grid"]),
              default=None, help="Override converge.study.")
def converge(config, seed, out, threads, quiet, study):
    """Run a refinement study and fit the observed order."""
    sys.exit(_dispatch(lambda c, o: run_converge(c, o, study, quiet), config, seed, out, threads))


@cli.command()
@_common
def sweep(config, seed, out, threads, quiet):
    """Repeat the simulation over the values of one configuration field."""
    sys.exit(_dispatch(lambda c, o: run_sweep(c, o, quiet), config, seed, out, threads))


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
