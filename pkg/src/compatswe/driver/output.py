"""CSV time series and legacy ASCII VTK snapshots."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from ..fem.spaces import evaluate
from ..fem.reference import REF_VERTICES
from ..swe import ConservedSet, ShallowWaterModel, State

CSV_COLUMNS = ("step", "time", "energy", "enstrophy", "total_pv", "mass",
               "rel_energy_err", "rel_enstrophy_err", "newton_iters")


def _g(x) -> str:
    return format(float(x), ".17g")


def _rel(x: float, x0: float) -> float:
    return (x - x0) / abs(x0) if x0 != 0 else x - x0


def series_rows(times: Sequence[float], conserved: Sequence[ConservedSet],
                iterations: Sequence[int] = ()) -> list:
    """One dict per recorded time; ``iterations`` lists the nonlinear iterations of each step."""
    if not conserved:
        raise ValueError("empty series: at least the initial state is required")
    c0 = conserved[0]
    its = [0] + list(iterations)
    rows = []
    for n, (t, c) in enumerate(zip(times, conserved)):
        rows.append(dict(step=n, time=t, energy=c.H, enstrophy=c.Zens, total_pv=c.Q, mass=c.M,
                         rel_energy_err=_rel(c.H, c0.H), rel_enstrophy_err=_rel(c.Zens, c0.Zens),
                         newton_iters=its[n] if n < len(its) else 0))
    return rows


def write_csv(series, path) -> None:
    """Write a run's conserved-quantity series; ``series`` is a RunResult or a list of row dicts."""
    if hasattr(series, "conserved"):
        rows = series_rows(series.times, series.conserved, [s.iterations for s in series.steps])
    else:
        rows = list(series)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([str(int(r["step"])), _g(r["time"]), _g(r["energy"]), _g(r["enstrophy"]),
                        _g(r["total_pv"]), _g(r["mass"]), _g(r["rel_energy_err"]),
                        _g(r["rel_enstrophy_err"]), str(int(r["newton_iters"]))])


def read_csv(path) -> list:
    with Path(path).open() as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [{k: (int(v) if k in ("step", "newton_iters") else float(v)) for k, v in r.items()}
                for r in reader]


def vertex_fields(model: ShallowWaterModel, state: State):
    """q and u per unwrapped vertex, D cell means.

    q is continuous, so its vertex value is read from the cell evaluation;
    u is averaged over the cells sharing each vertex.
    """
    mesh = model.mesh
    q = model.diagnose_q(model.vorticity_for(state), state.D)
    nu = len(mesh.unwrapped_vertices)
    qv = np.zeros(nu)
    uv = np.zeros((nu, 2))
    count = np.zeros(nu)
    for c in range(mesh.n_cells):
        qc = evaluate(q, c, REF_VERTICES)
        uc = evaluate(state.u, c, REF_VERTICES)
        idx = mesh.unwrapped_cells[c]
        qv[idx] = qc
        uv[idx] += uc
        count[idx] += 1
    uv /= np.maximum(count, 1)[:, None]
    Dmean = np.sum(model.V2.JxW * state.D.values(), axis=1) / mesh.cell_areas()
    return qv, uv, Dmean


def write_vtk(model: ShallowWaterModel, state: State, path) -> None:
    """Legacy ASCII unstructured grid; point data q, u and cell data D."""
    mesh = model.mesh
    qv, uv, Dmean = vertex_fields(model, state)
    pts = mesh.unwrapped_vertices
    cells = mesh.unwrapped_cells
    lines = ["# vtk DataFile Version 3.0",
             f"shallow water state t={_g(state.t)}",
             "ASCII",
             "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(pts)} double"]
    lines += [f"{_g(x)} {_g(y)} 0" for x, y in pts]
    lines.append(f"CELLS {len(cells)} {4 * len(cells)}")
    lines += [f"3 {a} {b} {c}" for a, b, c in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += ["5"] * len(cells)
    lines.append(f"POINT_DATA {len(pts)}")
    lines += ["SCALARS q double 1", "LOOKUP_TABLE default"]
    lines += [_g(v) for v in qv]
    lines.append("VECTORS u double")
    lines += [f"{_g(a)} {_g(b)} 0" for a, b in uv]
    lines.append(f"CELL_DATA {len(cells)}")
    lines += ["SCALARS D double 1", "LOOKUP_TABLE default"]
    lines += [_g(v) for v in Dmean]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def read_vtk(path) -> dict:
    """Minimal reader for files written by :func:`write_vtk` (and similar legacy ASCII grids)."""
    tokens = Path(path).read_text().split("\n")
    out = {"point_data": {}, "cell_data": {}}
    i = 4
    target = None
    while i < len(tokens):
        line = tokens[i].split()
        i += 1
        if not line:
            continue
        key = line[0]
        if key == "POINTS":
            n = int(line[1])
            out["points"] = np.array([[float(v) for v in tokens[i + k].split()] for k in range(n)])
            i += n
        elif key == "CELLS":
            n = int(line[1])
            out["cells"] = np.array([[int(v) for v in tokens[i + k].split()[1:]] for k in range(n)])
            i += n
        elif key == "CELL_TYPES":
            n = int(line[1])
            out["cell_types"] = np.array([int(tokens[i + k]) for k in range(n)])
            i += n
        elif key == "POINT_DATA":
            target, size = out["point_data"], int(line[1])
        elif key == "CELL_DATA":
            target, size = out["cell_data"], int(line[1])
        elif key == "SCALARS":
            i += 1  # lookup table line
            target[line[1]] = np.array([float(tokens[i + k]) for k in range(size)])
            i += size
        elif key == "VECTORS":
            target[line[1]] = np.array([[float(v) for v in tokens[i + k].split()] for k in range(size)])
            i += size
        else:
            raise ValueError(f"{path}: unexpected section {key!r}")
    return out
