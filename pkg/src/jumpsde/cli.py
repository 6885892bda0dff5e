"""Command-line entry point.

Each subcommand reads an optional TOML config, runs one experiment, writes
CSV files plus ``manifest.json`` into the output directory and prints a
short summary. Exit codes: 0 success, 2 configuration, 3 numerical
failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import platform
import sys
import time
from collections.abc import Sequence
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import Command, RunConfig, parse_config
from .errors import ConfigError, InvalidParameterError, NumericalError
from .experiments import (
    ConvergenceConfig,
    run_amplification_validation,
    run_convergence,
    run_stability_sweep,
)
from .increments import path_grid, write_grid_csv
from .schemes import SchemeKind, SchemeSpec, integrate_path
from .stability import (
    cstm_amplification,
    cstm_max_stable_dt,
    linear_l,
    semi_tamed_amplification,
    semi_tamed_linear_max_dt,
    stm_amplification,
    tamed_linear_max_dt,
    tamed_upper_factor,
)

__all__ = ["dispatch", "main"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _fmt(x) -> str:
    """Shortest round-trip text for a float; ints and strings pass through."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header: Sequence[str], rows, footer: Sequence | None = None) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        if footer is not None:
            w.writerow([_fmt(v) for v in footer])
    return path


def _theta(spec: SchemeSpec) -> float | None:
    return spec.theta if spec.kind.uses_theta else None


def _slug(spec: SchemeSpec) -> str:
    return f"{spec.kind.value}_theta{spec.theta:g}" if spec.kind.uses_theta else spec.kind.value


def _linear_params(cfg: RunConfig):
    lin = cfg.build_problem().linear
    if lin is None:
        raise ConfigError(f"{cfg.command.value} needs the linear problem, got {cfg.problem!r}")
    return lin.a, lin.b, lin.c, lin.lam


# -- subcommands ---------------------------------------------------------------------

def _run_path(cfg: RunConfig, out: Path) -> tuple[list[Path], list[str]]:
    problem = cfg.build_problem()
    p = cfg.path
    n = 2**p.fine_exponent
    grid = path_grid(cfg.seed, p.path_index, n, problem.m, p.horizon / n, problem.lam)
    rows, lines = [], []
    for spec in cfg.scheme_specs(problem):
        traj = integrate_path(problem, spec, grid, p.ratio)
        for t, x in zip(traj.times, traj.states):
            rows.append([spec.kind.value, _theta(spec), t, *x])
        status = "finite" if traj.diverged_at is None else f"diverged at step {traj.diverged_at}"
        lines.append(f"{spec.label}: X(T) = {traj.states[-1].tolist()} ({status})")
    header = ["scheme", "theta", "t", *(f"x_{i + 1}" for i in range(problem.d))]
    files = [_write_csv(out / "path.csv", header, rows)]
    files.append(out / "increments.csv")
    write_grid_csv(grid, files[-1])
    return files, lines


def _run_converge(cfg: RunConfig, out: Path) -> tuple[list[Path], list[str]]:
    problem = cfg.build_problem()
    c = cfg.converge
    ref_scheme = None
    if c.reference_scheme is not None:
        ref_scheme = SchemeSpec(SchemeKind(c.reference_scheme))
    files, lines = [], []
    for spec in cfg.scheme_specs(problem):
        config = ConvergenceConfig(
            problem=problem, scheme=spec, fine_exponent=c.fine_exponent, ratios=c.ratios,
            paths=c.paths, horizon=c.horizon, reference=cfg.reference(),
            reference_scheme=ref_scheme, seed=cfg.seed,
        )
        report = run_convergence(config, cfg.threads)
        rows = [[spec.kind.value, _theta(spec), r.dt, r.rmse, r.mc_stderr, r.diverged_fraction]
                for r in report.rows]
        files.append(_write_csv(
            out / f"converge_{_slug(spec)}.csv",
            ["scheme", "theta", "dt", "rmse", "stderr", "diverged_frac"],
            rows, ["order", report.fitted_order, report.fit_residual],
        ))
        lines.append(f"{spec.label}: fitted order {report.fitted_order:.3f} "
                     f"(log-residual {report.fit_residual:.3f})")
        for r in report.rows:
            mark = "" if r.valid else "  [excluded]"
            lines.append(f"  dt={r.dt:<10.6g} rmse={r.rmse:<12.5g} stderr={r.mc_stderr:<10.3g} "
                         f"diverged={r.diverged_fraction:.2%}{mark}")
        lines.extend(f"  note: {f}" for f in report.flags)
    return files, lines


def _run_stability(cfg: RunConfig, out: Path, analytic: bool) -> tuple[list[Path], list[str]]:
    problem = cfg.build_problem()
    s = cfg.stability
    series, summary, lines = [], [], []
    for spec in cfg.scheme_specs(problem):
        report = run_stability_sweep(problem, spec, s.dts, s.horizon, s.paths, cfg.seed,
                                     cfg.threads, s.max_points, s.epsilon)
        for row in report.rows:
            th = _theta(spec)
            series.extend([spec.kind.value, th, row.dt, t, v] for t, v in zip(row.times, row.mean_square))
            summary.append([spec.kind.value, th, row.dt, row.classification.value, row.rate])
            lines.append(f"{spec.label:<24} dt={row.dt:<8g} {row.classification.value:<12} "
                         f"rate={row.rate:.4g} diverged={row.diverged_fraction:.2%}")
    files = [
        _write_csv(out / "stability_series.csv", ["scheme", "theta", "dt", "t", "mean_square"], series),
        _write_csv(out / "stability_summary.csv", ["scheme", "theta", "dt", "classification", "rate"], summary),
    ]
    if analytic:
        more_files, more_lines = _run_analytic(cfg, out, s.dts)
        files += more_files
        lines += ["", *more_lines]
    return files, lines


def _run_amplification(cfg: RunConfig, out: Path) -> tuple[list[Path], list[str]]:
    a, b, c, lam = _linear_params(cfg)
    rows, lines = [], []
    for spec in cfg.scheme_specs():
        for dt in cfg.amplification.dts:
            rec = run_amplification_validation(a, b, c, lam, spec.theta, dt, cfg.amplification.samples,
                                               spec.kind, cfg.seed)
            rows.append([rec.scheme, rec.theta, rec.dt, rec.samples, rec.empirical,
                         rec.closed_form, rec.stderr, rec.z])
            lines.append(f"{spec.label:<24} dt={dt:<8g} empirical={rec.empirical:.6g} "
                         f"closed={rec.closed_form:.6g} z={rec.z:+.2f}")
    files = [_write_csv(out / "amplification.csv",
                        ["scheme", "theta", "dt", "samples", "empirical", "closed_form", "stderr", "z"], rows)]
    return files, lines


def _run_analytic(cfg: RunConfig, out: Path, dts: Sequence[float] | None = None) -> tuple[list[Path], list[str]]:
    a, b, c, lam = _linear_params(cfg)
    dts = tuple(dts if dts is not None else cfg.analytic.dts)
    l = linear_l(a, b, c, lam)
    stable_sde = l < 0
    rows = []
    lines = [f"linear test equation a={a:g} b={b:g} c={c:g} lambda={lam:g}: l = {l:.6g}"
             + ("" if stable_sde else " (exact solution not mean-square stable)")]

    def threshold(fn, *args):
        return fn(*args) if stable_sde else None

    for theta in cfg.analytic.thetas:
        thr = threshold(cstm_max_stable_dt, a, b, c, lam, theta)
        for dt in dts:
            g = cstm_amplification(a, b, c, lam, theta, dt)
            rows.append(["cstm", theta, dt, g, thr, g < 1])
        lines.append(f"  cstm theta={theta:<5g} stable for dt < {thr:.6g}" if thr is not None
                     else f"  cstm theta={theta:g}: no threshold")
    for theta in cfg.analytic.thetas:
        for dt in dts:
            g = stm_amplification(a, b, c, lam, theta, dt)
            rows.append(["stm", theta, dt, g, None, g < 1])
    semi = threshold(semi_tamed_linear_max_dt, a, b, c, lam)
    for dt in dts:
        g = semi_tamed_amplification(a, b, c, lam, dt)
        rows.append(["semi-tamed", None, dt, g, semi, g < 1])
    cert = tamed_linear_max_dt(a, b, c, lam) if stable_sde else None
    for dt in dts:
        g, _ = tamed_upper_factor(a, b, c, lam, dt)
        rows.append(["tamed", None, dt, g, cert.max_dt if cert else None,
                     bool(cert and dt < cert.max_dt)])
    if semi is not None:
        lines.append(f"  semi-tamed stable for dt < {semi:.6g}")
    if cert is not None:
        lines.append(f"  tamed certified for dt < {cert.max_dt:.6g} (case {cert.case})"
                     + (f" {cert.diagnostic}" if cert.diagnostic else ""))
    files = [_write_csv(out / "analytic.csv", ["scheme", "theta", "dt", "factor", "threshold", "certified"], rows)]
    return files, lines


# -- dispatch ------------------------------------------------------------------------

def dispatch(cfg: RunConfig, analytic: bool = False) -> tuple[list[Path], list[str]]:
    """Run the configured experiment; return the written files and summary lines."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.command is Command.PATH:
        return _run_path(cfg, out)
    if cfg.command is Command.CONVERGE:
        return _run_converge(cfg, out)
    if cfg.command is Command.STABILITY:
        return _run_stability(cfg, out, analytic or cfg.stability.analytic)
    if cfg.command is Command.AMPLIFICATION:
        return _run_amplification(cfg, out)
    return _run_analytic(cfg, out)


def _manifest(cfg: RunConfig, files: list[Path], wall: float, started: datetime) -> dict:
    return {
        "version": __version__,
        "command": cfg.command.value,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "config": cfg.echo(),
        "started_utc": started.isoformat(timespec="seconds"),
        "wall_time_s": round(wall, 3),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "outputs": [f.name for f in files],
    }


def _threads_arg(text: str) -> int | str:
    if text == "auto":
        return text
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer or 'auto', got {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer or 'auto', got {text!r}")
    return n


def _seed_arg(text: str) -> int:
    try:
        n = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an unsigned 64-bit integer, got {text!r}") from None
    if not 0 <= n < 2**64:
        raise argparse.ArgumentTypeError(f"expected an unsigned 64-bit integer, got {text!r}")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jumpsde", description="Jump-diffusion SDE experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        Command.PATH: "simulate one path and dump it with its increments",
        Command.CONVERGE: "strong-error convergence study",
        Command.STABILITY: "mean-square stability sweep over step sizes",
        Command.AMPLIFICATION: "Monte Carlo check of closed-form one-step factors",
        Command.ANALYTIC: "closed-form stability factors and thresholds",
    }
    for cmd, text in helps.items():
        p = sub.add_parser(cmd.value, help=text, description=text)
        p.add_argument("--config", type=Path, help="TOML run configuration")
        p.add_argument("--seed", type=_seed_arg, help="master seed (overrides the config)")
        p.add_argument("--out", type=Path, help="output directory (default: results)")
        p.add_argument("--threads", type=_threads_arg, help="worker threads, or 'auto'")
        if cmd is Command.STABILITY:
            p.add_argument("--analytic", action="store_true", help="also write analytic.csv for the linear problem")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else ""
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        cfg = parse_config(text, args.command)
        overrides = {k: v for k, v in (("seed", args.seed), ("threads", args.threads)) if v is not None}
        if args.out is not None:
            overrides["out"] = str(args.out)
        cfg = dataclasses.replace(cfg, **overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    try:
        files, lines = dispatch(cfg, getattr(args, "analytic", False))
        wall = time.perf_counter() - t0
        manifest = Path(cfg.out) / "manifest.json"
        manifest.write_text(json.dumps(_manifest(cfg, files, wall, started), indent=2, default=_json_default)
                            + "\n", encoding="utf-8")
    except (ConfigError, InvalidParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO

    print("\n".join(lines))
    print(f"wrote {len(files) + 1} file(s) to {cfg.out} in {wall:.1f} s")
    return EXIT_OK


def _json_default(obj):
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    return str(obj)
