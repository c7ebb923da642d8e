"""Command-line pipelines: simulate, optimize, reconstruct, check-pmp.

Settings resolve with precedence flag > environment > config > default.
Environment variables: IMFC_GRID_CELLS, IMFC_PARTICLES, IMFC_TOL_GAP,
IMFC_WORKERS, IMFC_SEED, IMFC_OUT_DIR.

Exit codes: 0 ok, 1 user error (bad config, flags or inputs), 2 numerical
failure (non-finite states, refused jump map).
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from .config import ScenarioConfig, build_control, build_spec, load_config
from .fields import ConfigError
from .hamiltonian import hamiltonian_trace_csv
from .measures import DimensionError
from .optimizer import evaluate, find_lambda, frank_wolfe
from .pmp_checker import CheckError, check_impulsive, check_reduced, check_report
from .reduced_system import ConstraintError, IntegrationError, ReducedControl, embed_control, terminal_cost
from .time_change import CommutativityError, project_to_impulsive

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 1, 2

ENV = {
    "grid_cells": ("IMFC_GRID_CELLS", int),
    "particles": ("IMFC_PARTICLES", int),
    "tol_gap": ("IMFC_TOL_GAP", float),
    "workers": ("IMFC_WORKERS", int),
    "seed": ("IMFC_SEED", int),
    "out_dir": ("IMFC_OUT_DIR", str),
}


class UsageError(Exception):
    pass


def _override(args: argparse.Namespace, key: str):
    """Flag value if given, else the environment variable, else None."""
    val = getattr(args, key, None)
    if val is not None:
        return val
    var, cast = ENV[key]
    raw = os.environ.get(var)
    if raw is None or raw == "":
        return None
    try:
        return cast(raw)
    except ValueError:
        raise UsageError(f"environment variable {var}={raw!r} is not a valid {cast.__name__}") from None


def resolve(args: argparse.Namespace) -> tuple[ScenarioConfig, Path]:
    source = args.config_pos or args.config
    if source is None:
        raise UsageError("a config is required (positional or --config)")
    data = load_config(source).to_dict()
    for key in ("grid_cells", "tol_gap", "workers"):
        val = _override(args, key)
        if val is not None:
            data["solver"][key] = val
    seed = _override(args, "seed")
    if seed is not None:
        data["seed"] = seed
    particles = _override(args, "particles")
    if particles is not None:
        if data["theta"]["kind"] == "points":
            raise UsageError("--particles cannot resize an explicit point list")
        data["theta"]["N"] = particles
    out = _override(args, "out_dir") or "out"
    return ScenarioConfig.from_dict(data), Path(out)


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"package": pkg, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def write_manifest(out: Path, command: str, cfg: ScenarioConfig, spec, extra: dict | None = None) -> None:
    """Deterministic run record; its ``config`` block is a complete scenario."""
    cells = cfg.solver.grid_cells
    manifest = {
        "command": command,
        "config_hash": cfg.hash(),
        "config": cfg.to_dict(),
        "grid": {"cells": cells, "S": spec.S, "ds": spec.S / cells, "particles": spec.N, "n": spec.n, "m": spec.m},
        "tolerances": {
            "tol_gap": cfg.solver.tol_gap,
            "tol_T": 1e-9 * spec.S,
            "eps_alpha": 1e-9,
            "eps_beta": 1e-9,
            "pmp_tol": "1e-4*(1+|H1|+|H0|)",
        },
        "bounds": spec.bound_report,
        "versions": _versions(),
        **(extra or {}),
    }
    # check-pmp reads an existing run directory; keep that run's manifest intact
    name = "pmp_manifest.json" if command == "check-pmp" else "manifest.json"
    _write(out / name, json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _dump(path: Path, obj) -> None:
    _write(path, json.dumps(obj, indent=1, sort_keys=True, default=float) + "\n")


def _export_impulsive(out: Path, imp) -> None:
    _write(out / "impulsive.json", imp.to_json() + "\n")
    _write(out / "mu.csv", imp.mu_csv())
    for q, jump in enumerate(imp.jumps):
        _write(out / f"jump_{q}_completion.csv", jump.completion_csv())


def _read_control(path: str | None, out: Path, spec) -> ReducedControl:
    src = Path(path) if path else out / "control.csv"
    try:
        text = src.read_text()
    except OSError:
        raise UsageError(f"cannot read reduced control {src}") from None
    try:
        ctrl = ReducedControl.from_csv(text, S=spec.S)
    except (ValueError, IndexError) as exc:
        raise UsageError(f"{src}: malformed control CSV ({exc})") from None
    if ctrl.m != spec.m:
        raise UsageError(f"{src}: control has m={ctrl.m}, scenario has m={spec.m}")
    ctrl.check(spec.T)
    return ctrl


def cmd_simulate(args, cfg, out) -> int:
    spec = build_spec(cfg)
    if args.control:
        ctrl = _read_control(args.control, out, spec)
    else:
        ctrl = embed_control(build_control(cfg), spec.M, cfg.solver.grid_cells, allow_slack=True)
    ev = evaluate(spec, ctrl, cfg.solver.substeps, cfg.solver.workers)
    _write(out / "control.csv", ctrl.to_csv())
    _write(out / "trajectory.csv", ev.traj.to_csv())
    _write(out / "terminal.csv", ev.traj.terminal.to_csv())
    summary = {"terminal_cost": ev.cost, "bounds": spec.bound_report}
    if not args.no_project:
        imp = project_to_impulsive(spec, ctrl, ev.traj)
        _export_impulsive(out, imp)
        summary["jumps"] = [j.summary() for j in imp.jumps]
        summary["dead_runs"] = [list(r) for r in imp.dead_runs]
    _dump(out / "summary.json", summary)
    write_manifest(out, "simulate", cfg, spec, {"inputs": {"control": args.control}})
    print(f"terminal cost {ev.cost:.10g}; outputs in {out}")
    return EXIT_OK


def cmd_optimize(args, cfg, out) -> int:
    spec = build_spec(cfg)
    cells = cfg.solver.grid_cells
    if cfg.solver.init == "control":
        init = embed_control(build_control(cfg), spec.M, cells)
    else:
        init = ReducedControl.uniform(spec.T, spec.M, cells, spec.m)
    ctrl, cert = frank_wolfe(spec, init, cfg.solver.fw_options())
    ev = evaluate(spec, ctrl, cfg.solver.substeps, cfg.solver.workers)
    imp = project_to_impulsive(spec, ctrl, ev.traj)
    _write(out / "control.csv", ctrl.to_csv())
    _write(out / "trajectory.csv", ev.traj.to_csv())
    _write(out / "lifted.csv", ev.lifted.to_csv())
    _write(out / "hamiltonian.csv", hamiltonian_trace_csv(spec, ev.lifted, ctrl, cert.lam))
    _write(out / "certificate.json", cert.to_json() + "\n")
    _export_impulsive(out, imp)
    write_manifest(out, "optimize", cfg, spec)
    print(f"{cert.status} after {cert.iterations} iterations: cost {cert.cost:.10g}, residual {cert.residual:.3e}, "
          f"{len(imp.jumps)} jump(s)")
    return EXIT_OK


def cmd_reconstruct(args, cfg, out) -> int:
    spec = build_spec(cfg)
    ctrl = _read_control(args.control, out, spec)
    ev = evaluate(spec, ctrl, cfg.solver.substeps, cfg.solver.workers)
    imp = project_to_impulsive(spec, ctrl, ev.traj)
    _write(out / "trajectory.csv", ev.traj.to_csv())
    _export_impulsive(out, imp)
    write_manifest(out, "reconstruct", cfg, spec, {"inputs": {"control": args.control}})
    print(f"{len(imp.jumps)} jump(s), {len(imp.dead_runs)} dead run(s); outputs in {out}")
    return EXIT_OK


def cmd_check_pmp(args, cfg, out) -> int:
    spec = build_spec(cfg)
    ctrl = _read_control(args.control, out, spec)
    ev = evaluate(spec, ctrl, cfg.solver.substeps, cfg.solver.workers)
    lam = args.lam if args.lam is not None else find_lambda(ev.cells, spec.T, cfg.solver.tie_rule).lam
    reduced = check_reduced(spec, ctrl, ev.lifted, lam, args.tol, cells=ev.cells)
    imp = project_to_impulsive(spec, ctrl, ev.traj)
    impulsive = check_impulsive(spec, imp, ctrl, ev.lifted, lam, args.tol)
    report = check_report(reduced, impulsive, lam)
    report["cost"] = terminal_cost(spec, ev.traj)
    _dump(out / "pmp_report.json", report)
    text = reduced.summary() + "\n" + impulsive.summary() + "\n"
    _write(out / "pmp_report.txt", text)
    write_manifest(out, "check-pmp", cfg, spec, {"inputs": {"control": args.control, "lambda": args.lam, "tol": args.tol}})
    print(text, end="")
    print("passed" if report["passed"] else "FAILED")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "reconstruct": cmd_reconstruct,
    "check-pmp": cmd_check_pmp,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="impulsive-mfc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config_pos", nargs="?", metavar="CONFIG", help="scenario JSON, bundled name or manifest")
        p.add_argument("--config")
        p.add_argument("--out-dir", dest="out_dir")
        p.add_argument("--grid-cells", dest="grid_cells", type=int)
        p.add_argument("--particles", type=int)
        p.add_argument("--tol-gap", dest="tol_gap", type=float)
        p.add_argument("--workers", type=int)
        p.add_argument("--seed", type=int)
        if name in ("simulate", "reconstruct", "check-pmp"):
            p.add_argument("--control", help="reduced control CSV (default: OUT_DIR/control.csv)")
        if name == "simulate":
            p.add_argument("--no-project", action="store_true", help="skip the impulsive projection")
        if name == "check-pmp":
            p.add_argument("--lambda", dest="lam", type=float, help="multiplier (default: recomputed)")
            p.add_argument("--tol", type=float, help="absolute tolerance (default: relative 1e-4)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg, out = resolve(args)
        return COMMANDS[args.command](args, cfg, out)
    except (UsageError, ConfigError, ConstraintError, DimensionError, CheckError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (IntegrationError, CommutativityError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
