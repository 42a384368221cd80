"""Configuration-driven command line interface.

Config files are flat ``key = value`` text (``#`` starts a comment); the
repeated ``--set key=value`` flag overrides file values.  Subcommands:

  run          solve one configuration, write report.json / mass.csv / VTK
  convergence  refinement study over a level range, print + write EOC table
  describe     summary of a catalog problem (condition check, default sigma)

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import problems as prb
from .driver import (Discretization, SigmaPolicy, SolverOptions,
                     convergence_study, error_norms, march,
                     mass_conservation_check, sample_surface_points)
from .errors import ConfigError
from .fespace import eval_fe_function
from .vtkio import write_surface

# name: (parser, default, required)
_SCHEMA = {
    "problem": (str, None, True),
    "nu": (float, None, False),
    "t_final": (float, None, False),
    "level": (int, 3, False),
    "levels": (str, None, False),
    "h0": (float, 2.0, False),
    "n_slabs": (int, 8, False),
    "dt_over_h": (float, 1.0, False),
    "sigma_mode": (str, "theorem1", False),
    "sigma_value": (float, None, False),
    "solver_method": (str, "gmres", False),
    "solver_tol": (float, 1e-10, False),
    "solver_maxit": (int, 500, False),
    "quad_order": (int, 2, False),
    "band_factor": (float, 0.5, False),
    "threads": (int, 1, False),
    "outdir": (str, "out", False),
    "export_vtk": (bool, False, False),
    "export_csv": (bool, True, False),
    "seed": (int, 0, False),
}

_POSITIVE = {"level", "h0", "n_slabs", "dt_over_h", "solver_tol", "solver_maxit",
             "quad_order", "band_factor", "threads", "nu", "t_final"}


def _parse_bool(s):
    if isinstance(s, bool):
        return s
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def parse_config(path: str | Path, overrides: list[str] | None = None) -> dict:
    """Read and validate a flat key=value config file."""
    raw: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        raw[key] = val
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, val = (s.strip() for s in item.split("=", 1))
        raw[key] = val
    return validate_config(raw)


def validate_config(raw: dict) -> dict:
    unknown = set(raw) - set(_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = {}
    for key, (typ, default, required) in _SCHEMA.items():
        if key in raw:
            try:
                cfg[key] = _parse_bool(raw[key]) if typ is bool else typ(raw[key])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"config field {key!r}: {exc}") from None
        elif required:
            raise ConfigError(f"missing required config field: {key!r}")
        else:
            cfg[key] = default
    for key in _POSITIVE:
        if cfg.get(key) is not None and cfg[key] <= 0:
            raise ConfigError(f"config field {key!r} must be positive")
    if cfg["sigma_mode"] not in ("theorem1", "value", "zero"):
        raise ConfigError("sigma_mode must be one of theorem1|value|zero")
    if cfg["solver_method"] not in ("gmres", "direct"):
        raise ConfigError("solver_method must be gmres or direct")
    return cfg


def _get_problem(cfg: dict) -> prb.ProblemDefinition:
    try:
        return prb.get_problem(cfg["problem"], nu=cfg["nu"], t_final=cfg["t_final"])
    except KeyError as exc:
        raise ConfigError(str(exc)) from None


def _sigma_policy(cfg: dict) -> SigmaPolicy:
    return SigmaPolicy(mode=cfg["sigma_mode"], value=cfg["sigma_value"])


def _solver(cfg: dict) -> SolverOptions:
    return SolverOptions(method=cfg["solver_method"], tol=cfg["solver_tol"],
                         maxit=cfg["solver_maxit"])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(dataclasses.asdict(obj))
    return obj


def _ass7_report(problem, cfg) -> dict | None:
    if problem.c_F is None:
        return None
    skip = problem.metadata.get("singular_times", ())
    times = [t for t in np.linspace(0, problem.t_final, 5)
             if all(abs(t - s) > 0.02 for s in skip)]
    samples = sample_surface_points(problem, times, level=min(cfg["level"], 2),
                                    h0=cfg["h0"])
    return prb.check_condition_ass7(problem, samples)


def cmd_run(cfg: dict) -> int:
    problem = _get_problem(cfg)
    disc = Discretization(level=cfg["level"], n_slabs=cfg["n_slabs"], h0=cfg["h0"],
                          quad_order=cfg["quad_order"], band_factor=cfg["band_factor"])
    traj = march(problem, disc, sigma=_sigma_policy(cfg), solver=_solver(cfg),
                 threads=cfg["threads"], keep_geometry=True)
    outdir = Path(cfg["outdir"])
    outdir.mkdir(parents=True, exist_ok=True)

    mcheck = mass_conservation_check(traj)
    norms = None
    if problem.exact is not None:
        norms = error_norms(traj)
    report = {
        "config": {k: v for k, v in cfg.items()},
        "sigma": traj.sigma,
        "times": np.linspace(0, problem.t_final, disc.n_slabs + 1),
        "masses": traj.masses,
        "mass_loss": traj.mass_loss(),
        "mass_conservation": mcheck,
        "error_norms": norms,
        "condition_report": _ass7_report(problem, cfg),
        "slabs": [
            {"n": i + 1, **d, "solver": dataclasses.asdict(s)}
            for i, (d, s) in enumerate(zip(traj.slab_diagnostics, traj.solver_stats))
        ],
        "runtime_seconds": traj.runtime_seconds,
    }
    (outdir / "report.json").write_text(json.dumps(_jsonable(report), indent=2))

    if cfg["export_csv"]:
        with open(outdir / "mass.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "mass"])
            for t, m in zip(report["times"], traj.masses):
                w.writerow([f"{t:.12g}", f"{m:.12g}"])
    if cfg["export_vtk"]:
        from .assembly import slab_slice

        for fn in traj.slabs:
            sq = slab_slice(fn.slab, problem, fn.slab.t1, cfg["quad_order"])
            verts = sq.piece_verts.reshape(-1, problem.d)
            vals = eval_fe_function(fn, verts, fn.slab.t1) if len(verts) else None
            write_surface(outdir / f"surface_{fn.slab.n + 1:04d}.vtk",
                          sq.piece_verts, vals)
    print(f"run complete: {disc.n_slabs} slabs, mass loss {traj.mass_loss():.6g}, "
          f"report in {outdir / 'report.json'}")
    return 0


def _parse_levels(spec: str) -> list[int]:
    if ":" in spec:
        a, b = spec.split(":", 1)
        return list(range(int(a), int(b) + 1))
    return [int(s) for s in spec.split(",") if s.strip()]


def cmd_convergence(cfg: dict) -> int:
    if not cfg["levels"]:
        raise ConfigError("missing required config field: 'levels'")
    try:
        levels = _parse_levels(cfg["levels"])
    except ValueError as exc:
        raise ConfigError(f"bad levels spec {cfg['levels']!r}: {exc}") from None
    if not levels:
        raise ConfigError("empty level range")
    problem = _get_problem(cfg)
    rows = convergence_study(problem, levels, dt_over_h=cfg["dt_over_h"], h0=cfg["h0"],
                             quad_order=cfg["quad_order"], solver=_solver(cfg),
                             sigma=_sigma_policy(cfg))
    with_eoc = len(rows) > 1
    header = ["level", "h", "N", "LinfL2", "L2H1"]
    if with_eoc:
        header += ["EOC(LinfL2)", "EOC(L2H1)"]
    print("  ".join(f"{h:>12}" for h in header))
    for r in rows:
        cells = [f"{r.level:12d}", f"{r.h:12.4g}", f"{r.n_slabs:12d}",
                 f"{r.linf_l2:12.4e}", f"{r.l2_h1:12.4e}"]
        if with_eoc:
            cells += [f"{r.eoc_linf_l2:12.2f}" if r.eoc_linf_l2 is not None else " " * 12,
                      f"{r.eoc_l2_h1:12.2f}" if r.eoc_l2_h1 is not None else " " * 12]
        print("  ".join(cells))
    outdir = Path(cfg["outdir"])
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "eoc.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["level", "h", "n_slabs", "linf_l2", "eoc_linf_l2",
                    "l2_h1", "eoc_l2_h1"])
        for r in rows:
            w.writerow([r.level, r.h, r.n_slabs, r.linf_l2,
                        r.eoc_linf_l2 if r.eoc_linf_l2 is not None else "",
                        r.l2_h1, r.eoc_l2_h1 if r.eoc_l2_h1 is not None else ""])
    return 0


def cmd_describe(name: str) -> int:
    try:
        problem = prb.get_problem(name)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    print(f"problem: {problem.name}")
    print(f"  dimension: {problem.d}")
    print(f"  box: {' x '.join(f'({a:g},{b:g})' for a, b in problem.box)}")
    print(f"  t_final: {problem.t_final:g}   nu_d: {problem.nu_d:g}")
    print(f"  stationary surface: {problem.stationary}")
    print(f"  exact solution known: {problem.exact is not None}")
    for key, val in problem.metadata.items():
        if isinstance(val, float):
            print(f"  {key}: {val:.6g}")
        elif not callable(val):
            print(f"  {key}: {val}")
    try:
        sigma = prb.default_sigma(problem)
        print(f"  default sigma (ellipticity bound): {sigma:.8g}")
    except ValueError:
        hint = problem.sigma_hint
        print(f"  default sigma: not computable (no Poincare data); "
              f"sigma_hint = {hint}")
    if problem.c_F is not None:
        skip = problem.metadata.get("singular_times", ())
        times = [t for t in np.linspace(0, problem.t_final, 3)
                 if all(abs(t - s) > 0.02 for s in skip)]
        samples = sample_surface_points(problem, times, level=2)
        rep = prb.check_condition_ass7(problem, samples)
        print(f"  ellipticity condition: min value {rep['min_value']:.6g}, "
              f"satisfied: {rep['satisfied']}")
    else:
        print("  ellipticity condition: not checkable (no analytic Poincare constant)")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sttrace",
        description="Space-time trace FEM for transport-diffusion on evolving surfaces")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute one configuration")
    p_run.add_argument("config")
    p_run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value (repeatable)")
    p_conv = sub.add_parser("convergence", help="refinement study")
    p_conv.add_argument("config")
    p_conv.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p_desc = sub.add_parser("describe", help="summarize a catalog problem")
    p_desc.add_argument("name")
    args = parser.parse_args(argv)

    try:
        if args.command == "describe":
            return cmd_describe(args.name)
        cfg = parse_config(args.config, args.set)
        if args.command == "run":
            return cmd_run(cfg)
        return cmd_convergence(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
