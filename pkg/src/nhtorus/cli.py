"""Command-line frontend.

    nhtorus avg        averaged functions of a standard-form system
    nhtorus cycle      limit cycle of a guiding system
    nhtorus torus      invariant torus of the jerk family
    nhtorus jerk-demo  the whole pipeline on the jerk family
    nhtorus h1-check   hypothesis H1 for a jerk nonlinearity P

Every run writes ``manifest.json`` and ``run.log`` into the output
directory.  Exit status is 0 on success, 2 for configuration errors and 3
for numerical failures; the manifest carries the reason.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .averaging import (
    AveragingWorkspace,
    averaged_f,
    check_H1,
    first_nonvanishing_order,
    guiding_field,
    tabulate,
)
from .cycles import CycleError, find_limit_cycle
from .expr import ExprError
from .jerk import (
    DEFAULT_P,
    H1_GATE_TOL,
    H1Error,
    JerkSpec,
    equilibrium_seed,
    h1_gate,
    jerk_field,
    jerk_section,
    jerk_standard_form,
    limiting_curve_section,
    limiting_torus_distance,
    limiting_torus_point,
)
from .ode import IntegrationError, IntegratorConfig, SectionSpec, write_csv
from .sysdef import ConfigError, PeriodicityError, build_system, expr_planar_field, load_config
from .torus import TORUS_CONFIG, TorusError, detect_torus

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
NU_NEUTRAL = 5e-3
DEFAULT_BURN, DEFAULT_KEEP = 200, 2500

log = logging.getLogger("nhtorus")

RUN_TABLES = {
    "system": None,  # validated by build_system
    "jerk": {"P", "Q", "R", "order", "eps"},
    "avg": {"grid_x1", "grid_x2", "order", "tol"},
    "cycle": {"field", "seed", "section_normal", "section_anchor", "direction", "bounds", "tol"},
    "torus": {"burn", "keep", "harmonics", "x0", "theta0", "tol"},
    "h1": {"r_grid", "z_grid", "tol"},
}


class NumericalFailure(RuntimeError):
    pass


# --------------------------------------------------------------------------
# config handling


def _read_config(path):
    if path is None:
        return {}
    if not Path(path).is_file():
        raise ConfigError(f"config file not found: {path}")
    doc = load_config(path)
    unknown = sorted(set(doc) - set(RUN_TABLES))
    if unknown:
        raise ConfigError(f"unknown table(s): {', '.join(unknown)}")
    for name, allowed in RUN_TABLES.items():
        table = doc.get(name, {})
        if not isinstance(table, dict):
            raise ConfigError(f"[{name}] must be a table")
        if allowed is not None:
            extra = sorted(set(table) - allowed)
            if extra:
                raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(extra)}")
    return doc


def _parse_point(text: str):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"bad point {text!r}: expected comma-separated numbers") from None


def _grid(spec, key: str) -> np.ndarray:
    try:
        lo, hi, n = spec
        n = int(n)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be [lo, hi, n]") from None
    if n < 1 or not lo <= hi:
        raise ConfigError(f"{key} must be [lo, hi, n] with lo <= hi and n >= 1")
    return np.linspace(float(lo), float(hi), n)


def _integrator(tol, default: IntegratorConfig) -> IntegratorConfig:
    if tol is None:
        return default
    try:
        return IntegratorConfig(rtol=float(tol), atol=float(tol) * 1e-2)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _jerk_spec(doc, args) -> JerkSpec:
    table = dict(doc.get("jerk", {}))
    if args.eps is not None:
        table["eps"] = args.eps
    if args.order is not None:
        table["order"] = args.order
    try:
        return JerkSpec(
            P=table.get("P", DEFAULT_P),
            Q=table.get("Q"),
            R=table.get("R"),
            order=int(table.get("order", 5)),
            eps=float(table.get("eps", 0.2)),
        )
    except (ExprError, TypeError, ValueError) as exc:
        raise ConfigError(f"[jerk]: {exc}") from exc


# --------------------------------------------------------------------------
# output


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


class Run:
    """Bookkeeping for one invocation: artifacts, results, tolerances."""

    def __init__(self, out: Path):
        self.out = out
        self.artifacts: list = []
        self.results: dict = {}
        self.tolerances: dict = {}

    def json(self, name, obj):
        write_json(self.out / name, obj)
        self.artifacts.append(name)

    def csv(self, name, header, rows):
        write_csv(self.out / name, header, rows)
        self.artifacts.append(name)


# --------------------------------------------------------------------------
# subcommands


def run_h1(run: Run, doc, args, spec: JerkSpec | None = None) -> None:
    spec = spec or _jerk_spec(doc, args)
    table = doc.get("h1", {})
    if "r_grid" in table or "z_grid" in table:
        r = _grid(table.get("r_grid", [0.5, 4.0, 5]), "r_grid")
        z = _grid(table.get("z_grid", [-2.0, 2.0, 5]), "z_grid")
        report = check_H1(spec.P_at, np.sqrt(r), z)
    else:
        report = h1_gate(spec)
    tol = float(table.get("tol", args.tol if args.tol is not None else H1_GATE_TOL))
    run.tolerances["h1"] = tol
    rows = [
        (a * a, z, report.violations[i, j, 0], report.violations[i, j, 1])
        for i, a in enumerate(report.r_grid)
        for j, z in enumerate(report.z_grid)
    ]
    run.csv("h1_violations.csv", ["r", "z", "abs_mean_P", "abs_mean_P_sin"], rows)
    passed = report.max_violation <= tol
    run.json("h1.json", {"passed": passed, "max_violation": report.max_violation, "tol": tol})
    run.results["h1_max_violation"] = report.max_violation
    log.info("H1 max violation %.3e (tol %.1e)", report.max_violation, tol)
    if not passed:
        raise NumericalFailure(f"hypothesis H1 fails: max violation {report.max_violation:.3e}")


def _system_from(doc, args):
    if "system" in doc:
        try:
            system = build_system(doc["system"])
        except (ExprError, TypeError) as exc:
            raise ConfigError(f"[system]: {exc}") from exc
        return system, "system"
    spec = _jerk_spec(doc, args)
    return jerk_standard_form(spec, check_h1=False), "jerk"


def run_avg(run: Run, doc, args, system=None):
    if system is None:
        system, _ = _system_from(doc, args)
    table = doc.get("avg", {})
    if system.label.startswith("jerk"):
        defaults = ([1.0, 3.0, 5], [-1.0, 1.0, 5])
    else:
        (a0, a1), (b0, b1) = system.domain
        defaults = ([a0, a1, 5], [b0, b1, 5])
    gx = _grid(table.get("grid_x1", defaults[0]), "grid_x1")
    gy = _grid(table.get("grid_x2", defaults[1]), "grid_x2")
    grid = np.array([(a, b) for a in gx for b in gy])
    i_max = int(table.get("order", system.order))
    if not 1 <= i_max <= system.order:
        raise ConfigError(f"[avg] order must be in 1..{system.order}")
    ws = AveragingWorkspace(system, i_max)
    tol = table.get("tol")
    cert = first_nonvanishing_order(ws, grid, None if tol is None else float(tol))
    run.tolerances["vanishing"] = cert.tol
    run.tolerances["averaging_rtol"] = ws.cfg.rtol
    run.json("avg_certificate.json", {"order": cert.order, "max_norms": cert.max_norms, "tol": cert.tol, "grid": grid})
    run.results["first_nonvanishing_order"] = cert.order
    log.info("first non-vanishing order %d, norms %s", cert.order, cert.max_norms)
    if cert.order > i_max:
        raise NumericalFailure(f"all averaged functions up to order {i_max} vanish on the grid")
    f = averaged_f(ws, cert.order, grid)
    run.csv("avg_f.csv", ["x1", "x2", "f1", "f2"], np.column_stack([grid, f]))
    return ws, cert


def _cycle_inputs(doc, args, ws=None, order=None):
    table = doc.get("cycle", {})
    if "field" in table:
        try:
            field = expr_planar_field(table["field"], label="config field")
        except (ExprError, TypeError) as exc:
            raise ConfigError(f"[cycle] field: {exc}") from exc
        default_seed = None
    else:
        if ws is None:
            system, _ = _system_from(doc, args)
            ws = AveragingWorkspace(system)
            order = first_nonvanishing_order(ws, _default_grid(system)).order
            if order > ws.i_max:
                raise NumericalFailure("all averaged functions vanish: no guiding system")
        bounds = table.get("bounds", [list(b) for b in ws.system.domain])
        field = tabulate(guiding_field(ws, order), bounds)
        default_seed = [3.1, 0.0] if ws.system.label.startswith("jerk") else None
    seed = _parse_point(args.seed_point) if args.seed_point else table.get("seed", default_seed)
    if seed is None or len(seed) != 2:
        raise ConfigError("cycle needs a two-component seed point")
    normal = table.get("section_normal", [0.0, 1.0])
    anchor = table.get("section_anchor", [0.0, 0.0])
    try:
        section = SectionSpec(normal=tuple(normal), anchor=tuple(anchor), direction=int(table.get("direction", -1)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[cycle] section: {exc}") from exc
    return field, seed, section


def _default_grid(system):
    if system.label.startswith("jerk"):
        gx, gy = np.linspace(1, 3, 5), np.linspace(-1, 1, 5)
    else:
        (a0, a1), (b0, b1) = system.domain
        gx, gy = np.linspace(a0, a1, 5), np.linspace(b0, b1, 5)
    return np.array([(a, b) for a in gx for b in gy])


def run_cycle(run: Run, doc, args, ws=None, order=None):
    from .cycles import CYCLE_CONFIG

    field, seed, section = _cycle_inputs(doc, args, ws, order)
    cfg = _integrator(doc.get("cycle", {}).get("tol", args.tol), CYCLE_CONFIG)
    run.tolerances["cycle_rtol"] = cfg.rtol
    cycle = find_limit_cycle(field, seed, section, cfg)
    t = np.linspace(0.0, cycle.period, len(cycle.samples), endpoint=False)
    run.csv("cycle.csv", ["t", "x1", "x2"], np.column_stack([t, cycle.samples]))
    cert = cycle.certificate()
    cert["hyperbolic_attracting"] = cycle.hyperbolic_attracting
    run.json("cycle.json", cert)
    run.results.update({"period": cycle.period, "floquet_multiplier": cycle.multiplier})
    log.info("cycle period %.12g, multiplier %.6e", cycle.period, cycle.multiplier)
    return cycle


def run_torus(run: Run, doc, args, spec: JerkSpec | None = None):
    spec = spec or _jerk_spec(doc, args)
    table = doc.get("torus", {})
    burn = int(args.burn if args.burn is not None else table.get("burn", DEFAULT_BURN))
    keep = int(args.keep if args.keep is not None else table.get("keep", DEFAULT_KEEP))
    K = int(table.get("harmonics", 8))
    theta0 = float(table.get("theta0", 0.0))
    if burn < 0 or keep < 0 or K < 1:
        raise ConfigError("burn and keep must be >= 0 and harmonics >= 1")
    if args.seed_point:
        x0 = _parse_point(args.seed_point)
    else:
        x0 = table.get("x0", list(limiting_torus_point(np.pi / 2, theta0)))
    if len(x0) != 3:
        raise ConfigError("torus needs a three-component start point (x, x', x'')")
    cfg = _integrator(table.get("tol", args.tol), TORUS_CONFIG)
    run.tolerances["torus_rtol"] = cfg.rtol
    section = jerk_section(theta0)
    log.info("sampling eps=%g N=%d burn=%d keep=%d", spec.eps, spec.order, burn, keep)
    est = detect_torus(
        jerk_field(spec),
        section,
        x0,
        spec.eps,
        burn=burn,
        keep=keep,
        n_harmonics=K,
        cfg=cfg,
        reference=limiting_curve_section(section, theta0),
        distance=limiting_torus_distance,
        seed=equilibrium_seed(section, theta0),
    )
    s = est.sample
    run.csv(
        "torus_samples.csv",
        ["k", "return_time", "u1", "u2", "x", "xd", "xdd"],
        np.column_stack([np.arange(len(s)), s.times, s.points, s.states]) if len(s) else [],
    )
    psi = np.linspace(0.0, 2 * np.pi, 512, endpoint=False)
    run.csv("torus_curve.csv", ["psi", "rho", "u1", "u2"], np.column_stack([psi, est.curve.radius(psi), est.curve.points(psi)]))
    cert = est.certificate()
    cert.update({"order": spec.order, "burn": burn, "keep": keep, "theta0": theta0})
    run.json("torus.json", cert)
    run.results.update({"nu_hat": est.nu_hat, "sup_distance": est.sup_distance, "eps": spec.eps})
    log.info("nu_hat %.6f, fit %.2e, invariance %.2e", est.nu_hat, est.fit_residual, est.invariance_residual)
    if not est.normally_hyperbolic:
        if abs(est.nu_hat - 1) < NU_NEUTRAL:
            raise NumericalFailure("not normally hyperbolic: nu_hat ≈ 1")
        raise NumericalFailure(f"not normally hyperbolic: nu_hat = {est.nu_hat:.6f}")
    if est.curve_source != "sample":
        raise NumericalFailure(f"no invariant curve: {est.winding_error}")
    return est


def run_jerk_demo(run: Run, doc, args):
    spec = _jerk_spec(doc, args)
    run_h1(run, doc, args, spec)
    system = jerk_standard_form(spec)
    ws, cert = run_avg(run, doc, args, system)
    # the demo always continues with the guiding system it just computed
    cycle_table = {k: v for k, v in doc.get("cycle", {}).items() if k not in ("field", "seed")}
    cycle = run_cycle(run, {**doc, "cycle": cycle_table}, _no_seed(args), ws, cert.order)
    if not cycle.hyperbolic_attracting:
        raise NumericalFailure(f"guiding cycle is not attracting: multiplier {cycle.multiplier:.6e}")
    est = run_torus(run, doc, args, spec)
    run.json(
        "summary.json",
        {
            "eps": spec.eps,
            "order": spec.order,
            "h1_max_violation": run.results["h1_max_violation"],
            "first_nonvanishing_order": cert.order,
            "cycle_period": cycle.period,
            "floquet_multiplier": cycle.multiplier,
            "nu_hat": est.nu_hat,
            "fit_residual": est.fit_residual,
            "invariance_residual": est.invariance_residual,
            "sup_distance": est.sup_distance,
            "fixed_point": est.fixed_point,
            "multiplier_moduli": None if est.multipliers is None else np.abs(est.multipliers),
        },
    )


def _no_seed(args):
    ns = argparse.Namespace(**vars(args))
    ns.seed_point = None
    return ns


COMMANDS = {
    "avg": run_avg,
    "cycle": run_cycle,
    "torus": run_torus,
    "jerk-demo": run_jerk_demo,
    "h1-check": run_h1,
}


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nhtorus", description="Averaging, limit cycles and invariant tori.")
    p.add_argument("--version", action="version", version=f"nhtorus {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="TOML config file")
        sp.add_argument("--out", default="nhtorus-out", help="output directory")
        sp.add_argument("--eps", type=float, help="perturbation parameter of the jerk family")
        sp.add_argument("--order", type=int, help="order N of the jerk family")
        sp.add_argument("--tol", type=float, help="integrator relative tolerance")
        sp.add_argument("--seed-point", help="x,y[,z] start point")
        sp.add_argument("--burn", type=int, help="section returns discarded (torus)")
        sp.add_argument("--keep", type=int, help="section returns recorded (torus)")
    return p


def _versions() -> dict:
    import scipy
    import sklearn

    return {
        "nhtorus": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
    }


def _config_digest(path):
    if path is None or not Path(path).is_file():
        return None
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def main(argv=None) -> int:
    from filelock import FileLock, Timeout

    parser = build_parser()
    args = parser.parse_args(argv)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise PermissionError(f"output directory is not writable: {out}")
    except OSError as exc:
        print(f"nhtorus: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    lock = FileLock(str(out / ".nhtorus.lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        print(f"nhtorus: another run holds {out}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _main_locked(args, out)
    finally:
        lock.release()


def _main_locked(args, out: Path) -> int:
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    run = Run(out)
    start = time.perf_counter()
    status, code, reason = "ok", EXIT_OK, None
    try:
        doc = _read_config(args.config)
        COMMANDS[args.command](run, doc, args)
    except (ConfigError, PeriodicityError, ExprError) as exc:
        status, code, reason = "config_error", EXIT_CONFIG, str(exc)
    except (NumericalFailure, H1Error, IntegrationError, CycleError, TorusError, np.linalg.LinAlgError) as exc:
        status, code, reason = "numerical_failure", EXIT_NUMERIC, str(exc)
    finally:
        log.removeHandler(handler)
        handler.close()
    if reason:
        with open(out / "run.log", "a") as fh:
            fh.write(f"ERROR nhtorus: {reason}\n")
        print(f"nhtorus: {reason}", file=sys.stderr)
    manifest = {
        "command": args.command,
        "inputs": {
            "config": args.config,
            "config_sha256": _config_digest(args.config),
            "eps": args.eps,
            "order": args.order,
            "tol": args.tol,
            "seed_point": args.seed_point,
            "burn": args.burn,
            "keep": args.keep,
        },
        "versions": _versions(),
        "tolerances": run.tolerances,
        "wall_time_s": time.perf_counter() - start,
        "status": status,
        "exit_code": code,
        "reason": reason,
        "results": run.results,
        "artifacts": sorted(run.artifacts),
    }
    write_json(out / "manifest.json", manifest)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
