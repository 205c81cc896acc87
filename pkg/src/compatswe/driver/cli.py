"""Command line entry point ``swe``.

  swe run <config>                  integrate and write CSV / VTK output
  swe converge <config> --levels a,b,c
  swe mesh-info <config>
  swe validate <config>             set up, check invariants, do not integrate
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..mesh import describe, validate
from ..swe import PositivityError
from ..timestepping import StepFailure, run
from .analysis import convergence_study, format_table
from .config import ConfigError, load_config
from .output import write_csv, write_vtk
from .scenarios import ScenarioError, build_mesh, mesh_kind_for, setup

log = logging.getLogger("compatswe")


def _levels(text: str) -> list:
    try:
        levels = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"levels must be comma-separated integers: {text!r}") from exc
    if not levels:
        raise argparse.ArgumentTypeError("at least one level is required")
    return levels


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.csv:
        cfg.output.csv_path = args.csv
    s = setup(cfg)
    observers = []
    if cfg.output.vtk_every > 0:
        vtk_dir = Path(cfg.output.vtk_dir or ".")

        def snapshot(n, state, res):
            if n % cfg.output.vtk_every == 0:
                write_vtk(s.model, state, vtk_dir / f"state_{n:06d}.vtk")

        observers.append(snapshot)
    n_steps = cfg.n_steps
    log.info("running %s: %d steps of dt=%g on %d cells", cfg.scenario, n_steps, cfg.dt, s.mesh.n_cells)
    result = run(s.model, s.state, cfg.step_config(), n_steps, observers)
    if cfg.output.csv_path:
        write_csv(result, cfg.output.csv_path)
    c0, c1 = result.conserved[0], result.conserved[-1]
    H = np.array([c.H for c in result.conserved])
    print(f"t={result.state.t:.6g} steps={n_steps} "
          f"max_rel_energy_err={np.max(np.abs(H / c0.H - 1)):.3e} "
          f"rel_enstrophy_err={(c1.Zens - c0.Zens) / abs(c0.Zens) if c0.Zens else c1.Zens - c0.Zens:.3e} "
          f"pv_drift={c1.Q - c0.Q:.3e} mass_drift={c1.M - c0.M:.3e}")
    return 0


def cmd_converge(args) -> int:
    cfg = load_config(args.config)
    rows = convergence_study(cfg, args.levels)
    print(format_table(rows))
    return 0


def cmd_mesh_info(args) -> int:
    cfg = load_config(args.config)
    mesh = build_mesh(mesh_kind_for(cfg), cfg.refinement, cfg.mesh.Lx, cfg.mesh.Ly)
    print(describe(mesh))
    report = validate(mesh)
    print(report)
    return 0 if report.ok else 1


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    s = setup(cfg)
    model, state = s.model, s.state
    checks = []
    report = validate(s.mesh)
    checks.append(("mesh", report.ok, str(report)))
    dmin = float(np.min(state.D.values()))
    checks.append(("positive depth", dmin > 0, f"min D = {dmin:.6g}"))
    r = np.max(np.abs(model.consistency_residual(state.u, state.Z)))
    checks.append(("vorticity consistency", r <= 1e-11, f"max residual = {r:.3e}"))
    diag = model.diagnostics(state)
    ut, Dt, Zt = model.semidiscrete_tendencies(state, diag)
    finite = all(np.all(np.isfinite(v)) for v in (ut, Dt, Zt))
    checks.append(("finite tendencies", finite, ""))
    H = model.energy(state.u, state.D)
    Hdot = float(diag.F.coefficients @ (model.M1 @ ut)
                 + model.V2.test_integral(model.bernoulli(state.u, state.D)) @ Dt)
    checks.append(("energy rate", abs(Hdot) <= 1e-10 * max(1.0, abs(H)), f"dH/dt = {Hdot:.3e}"))
    ok = True
    for name, passed, detail in checks:
        ok &= bool(passed)
        print(f"{'PASS' if passed else 'FAIL'} {name} {detail}".rstrip())
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swe", description="Compatible finite element rotating shallow water solver")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="integrate a configuration")
    r.add_argument("config")
    r.add_argument("--csv", help="override output.csv_path")
    r.set_defaults(func=cmd_run)
    c = sub.add_parser("converge", help="steady-state convergence study")
    c.add_argument("config")
    c.add_argument("--levels", type=_levels, required=True, help="comma-separated refinements, e.g. 8,16,32")
    c.set_defaults(func=cmd_converge)
    m = sub.add_parser("mesh-info", help="print mesh statistics and validation")
    m.add_argument("config")
    m.set_defaults(func=cmd_mesh_info)
    v = sub.add_parser("validate", help="set up and check invariants without integrating")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (StepFailure, PositivityError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
