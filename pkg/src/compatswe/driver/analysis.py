"""Post-processing: Kelvin-wave crest tracking and steady-state convergence studies."""
from __future__ import annotations

import dataclasses
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np

from ..fem.spaces import l2_error
from ..swe import ShallowWaterModel, State
from ..timestepping import run
from .config import Config
from .scenarios import ScenarioError, setup

log = logging.getLogger(__name__)


def boundary_depth(model: ShallowWaterModel, state: State):
    """(angle, D) at boundary vertices; D averaged over the cells sharing each vertex."""
    mesh = model.mesh
    bv = mesh.boundary_vertices()
    Dcell = np.sum(model.V2.JxW * state.D.values(), axis=1) / mesh.cell_areas()
    total = np.bincount(mesh.cells.ravel(), weights=np.repeat(Dcell, 3), minlength=mesh.n_vertices)
    count = np.bincount(mesh.cells.ravel(), minlength=mesh.n_vertices)
    xy = mesh.vertices[bv]
    theta = np.arctan2(xy[:, 1], xy[:, 0])
    order = np.argsort(theta)
    return theta[order], (total[bv] / count[bv])[order]


def crest_angle(model: ShallowWaterModel, state: State, method: str = "argmax") -> float:
    """Angular position of the wave crest along the wall.

    ``argmax``: angle of the boundary vertex with the largest depth.
    ``harmonic``: phase of the first Fourier mode of the boundary depth.
    """
    theta, d = boundary_depth(model, state)
    if method == "argmax":
        return float(theta[np.argmax(d)])
    if method == "harmonic":
        d = d - d.mean()
        return float(math.atan2(np.sum(d * np.sin(theta)), np.sum(d * np.cos(theta))))
    raise ValueError(f"unknown crest method {method!r}")


def angular_speed(times: Sequence[float], angles: Sequence[float]) -> float:
    """Least-squares slope of the unwrapped angle against time."""
    a = np.unwrap(np.asarray(angles, dtype=float))
    t = np.asarray(times, dtype=float)
    return float(np.polyfit(t, a, 1)[0])


def track_crest(model: ShallowWaterModel, state: State, step_cfg, n_steps: int,
                method: str = "argmax"):
    """Run and return (times, crest angles, RunResult)."""
    times, angles = [], []

    def observe(n, s, res):
        times.append(s.t)
        angles.append(crest_angle(model, s, method))

    result = run(model, state, step_cfg, n_steps, [observe])
    return np.array(times), np.array(angles), result


@dataclasses.dataclass
class ConvergenceRow:
    refinement: int
    h: float
    err_u: float
    err_D: float
    tendency_u: float
    tendency_D: float
    rate_u: float = float("nan")
    rate_D: float = float("nan")


def _rate(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> float:
    if e_coarse <= 0 or e_fine <= 0:
        return float("nan")
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)


def steady_errors(cfg: Config, refinement: int) -> ConvergenceRow:
    """Run one refinement to cfg.t_end and measure L2 errors against the steady solution."""
    s = setup(cfg, refinement)
    ref = s.scenario.reference()
    if ref is None:
        raise ScenarioError(f"scenario {cfg.scenario} has no steady reference solution")
    u_ex, D_ex = ref
    model = s.model
    ut, Dt, _ = model.semidiscrete_tendencies(s.state)
    tend_u = math.sqrt(float(ut @ (model.M1 @ ut)))
    tend_D = math.sqrt(float(Dt @ (model.M2 @ Dt)))
    result = run(model, s.state, cfg.step_config(), cfg.n_steps if cfg.t_end > 0 else 0)
    final = result.state
    return ConvergenceRow(refinement, s.mesh.max_edge_length(), l2_error(final.u, u_ex),
                          l2_error(final.D, D_ex), tend_u, tend_D)


def convergence_study(cfg: Config, levels: Sequence[int]) -> list:
    """Errors and observed rates (log error ratio over log h ratio) per refinement level."""
    levels = list(levels)
    workers = max(1, int(os.environ.get("SWE_THREADS", "1")))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(lambda L: steady_errors(cfg, L), levels))
    else:
        rows = [steady_errors(cfg, L) for L in levels]
    for a, b in zip(rows, rows[1:]):
        b.rate_u = _rate(a.err_u, b.err_u, a.h, b.h)
        b.rate_D = _rate(a.err_D, b.err_D, a.h, b.h)
    for r in rows:
        log.info("refinement %d h=%.4g err_u=%.4e err_D=%.4e rate_u=%.3f rate_D=%.3f",
                 r.refinement, r.h, r.err_u, r.err_D, r.rate_u, r.rate_D)
    return rows


def format_table(rows: Sequence[ConvergenceRow]) -> str:
    head = f"{'level':>6} {'h':>10} {'err_u':>12} {'rate_u':>7} {'err_D':>12} {'rate_D':>7} {'|u_t|':>11} {'|D_t|':>11}"
    lines = [head]
    for r in rows:
        lines.append(f"{r.refinement:>6d} {r.h:>10.4g} {r.err_u:>12.4e} {r.rate_u:>7.3f} "
                     f"{r.err_D:>12.4e} {r.rate_D:>7.3f} {r.tendency_u:>11.3e} {r.tendency_D:>11.3e}")
    return "\n".join(lines)
