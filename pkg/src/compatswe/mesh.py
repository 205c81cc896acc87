"""Planar triangulations with oriented edges and boundary metadata.

Cells are stored with their own (unwrapped) vertex coordinates so that
periodic meshes can identify vertices and edges topologically while each
cell keeps a well-defined affine geometry.
"""
from __future__ import annotations

import dataclasses
import math
from pathlib import Path
from typing import Callable, Hashable, Optional, Sequence

import numpy as np


@dataclasses.dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable planar triangle mesh.

    Attributes:
      vertices: (nv, 2) coordinates of the (identified) vertices.
      cells: (nc, 3) identified vertex indices, counterclockwise.
      cell_coords: (nc, 3, 2) geometric coordinates of each cell's vertices.
      edges: (ne, 2) identified vertex indices in global orientation.
      cell_edges: (nc, 3) local edge i is opposite local vertex i.
      cell_edge_signs: (nc, 3) +1 where the counterclockwise traversal of the
        local edge agrees with the global orientation, -1 otherwise.
      edge_cells: (ne, 2) incident cells, -1 padding for boundary edges.
      boundary_edges: indices of edges with a single incident cell.
      boundary_normals: (nb, 2) unit outward normals of the boundary edges.
      periodic: (px, py) periods, None where the direction is not periodic.
      unwrapped_cells: (nc, 3) indices into ``unwrapped_vertices``.
      unwrapped_vertices: coordinates before periodic identification.
      vertex_map: unwrapped vertex index -> identified vertex index.
    """

    vertices: np.ndarray
    cells: np.ndarray
    cell_coords: np.ndarray
    edges: np.ndarray
    cell_edges: np.ndarray
    cell_edge_signs: np.ndarray
    edge_cells: np.ndarray
    boundary_edges: np.ndarray
    boundary_normals: np.ndarray
    boundary_local: np.ndarray
    periodic: tuple
    unwrapped_cells: np.ndarray
    unwrapped_vertices: np.ndarray
    vertex_map: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_cells

    @property
    def has_boundary(self) -> bool:
        return len(self.boundary_edges) > 0

    def jacobians(self) -> np.ndarray:
        """(nc, 2, 2) affine maps from the reference triangle."""
        x = self.cell_coords
        return np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=-1)

    def cell_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.det(self.jacobians())

    @property
    def area(self) -> float:
        return float(np.sum(self.cell_areas()))

    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.edges[self.boundary_edges].ravel())

    def edge_lengths(self) -> np.ndarray:
        lengths = np.zeros(self.n_edges)
        for e in range(3):
            a = self.cell_coords[:, (e + 1) % 3]
            b = self.cell_coords[:, (e + 2) % 3]
            lengths[self.cell_edges[:, e]] = np.linalg.norm(b - a, axis=1)
        return lengths

    def max_edge_length(self) -> float:
        return float(self.edge_lengths().max())

    @classmethod
    def from_cells(
        cls,
        coords: np.ndarray,
        cells: np.ndarray,
        vertex_map: Optional[np.ndarray] = None,
        edge_key: Optional[Callable[[int, int], Hashable]] = None,
        periodic: tuple = (None, None),
    ) -> "Mesh":
        """Build connectivity from unwrapped coordinates and cells.

        ``vertex_map`` identifies unwrapped vertices (periodicity) and
        ``edge_key`` maps an unwrapped vertex pair (low, high) to a key shared
        by all periodic copies of the edge.  Cells are used as given; a
        clockwise cell is kept (and reported by :func:`validate`).
        """
        coords = np.asarray(coords, dtype=float)
        cells = np.asarray(cells, dtype=np.int64)
        nu = len(coords)
        if vertex_map is None:
            vertex_map = np.arange(nu)
        vertex_map = np.asarray(vertex_map, dtype=np.int64)
        if edge_key is None:
            edge_key = lambda a, b: (a, b)  # noqa: E731

        n_ident = int(vertex_map.max()) + 1 if nu else 0
        vertices = np.zeros((n_ident, 2))
        # representative coordinates: first unwrapped vertex mapped there
        seen = np.zeros(n_ident, dtype=bool)
        for i in range(nu):
            v = vertex_map[i]
            if not seen[v]:
                vertices[v] = coords[i]
                seen[v] = True

        keys: dict = {}
        edges = []
        edge_cells = []
        nc = len(cells)
        cell_edges = np.zeros((nc, 3), dtype=np.int64)
        signs = np.zeros((nc, 3), dtype=np.int64)
        for c in range(nc):
            for e in range(3):
                p = int(cells[c, (e + 1) % 3])
                q = int(cells[c, (e + 2) % 3])
                lo, hi = (p, q) if p < q else (q, p)
                key = edge_key(lo, hi)
                idx = keys.get(key)
                if idx is None:
                    idx = len(edges)
                    keys[key] = idx
                    edges.append((vertex_map[lo], vertex_map[hi]))
                    edge_cells.append([c, -1])
                else:
                    edge_cells[idx][1] = c
                cell_edges[c, e] = idx
                signs[c, e] = 1 if p < q else -1

        edge_cells = np.array(edge_cells, dtype=np.int64).reshape(-1, 2)
        boundary = np.flatnonzero(edge_cells[:, 1] < 0)
        cell_coords = coords[cells]
        normals = np.zeros((len(boundary), 2))
        local = np.zeros((len(boundary), 2), dtype=np.int64)
        for k, ed in enumerate(boundary):
            c = edge_cells[ed, 0]
            e = int(np.flatnonzero(cell_edges[c] == ed)[0])
            t = cell_coords[c, (e + 2) % 3] - cell_coords[c, (e + 1) % 3]
            n = np.array([t[1], -t[0]])
            normals[k] = n / np.hypot(n[0], n[1])
            local[k] = (c, e)

        return cls(
            vertices=vertices,
            cells=vertex_map[cells],
            cell_coords=cell_coords,
            edges=np.array(edges, dtype=np.int64).reshape(-1, 2),
            cell_edges=cell_edges,
            cell_edge_signs=signs,
            edge_cells=edge_cells,
            boundary_edges=boundary,
            boundary_normals=normals,
            boundary_local=local,
            periodic=tuple(periodic),
            unwrapped_cells=cells,
            unwrapped_vertices=coords,
            vertex_map=vertex_map,
        )


def build_periodic_rectangle(nx: int, ny: int, Lx: float, Ly: float,
                             periodic_x: bool = True,
                             periodic_y: bool = True) -> Mesh:
    """Structured mesh of [0, Lx] x [0, Ly], each quad cut along its main diagonal."""
    if nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be >= 1, got nx={nx}, ny={ny}")
    if not (Lx > 0 and Ly > 0):
        raise ValueError(f"side lengths must be positive, got Lx={Lx}, Ly={Ly}")

    def uid(i, j):
        return i + j * (nx + 1)

    ii, jj = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="xy")
    coords = np.column_stack([ii.ravel() * (Lx / nx), jj.ravel() * (Ly / ny)])

    mi = ii.ravel() % nx if periodic_x else ii.ravel()
    mj = jj.ravel() % ny if periodic_y else jj.ravel()
    wx = nx if periodic_x else nx + 1
    ident_keys = mi + mj * wx
    _, vertex_map = np.unique(ident_keys, return_inverse=True)

    cells = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = uid(i, j), uid(i + 1, j), uid(i + 1, j + 1), uid(i, j + 1)
            cells.append((a, b, c))
            cells.append((a, c, d))

    def edge_key(lo, hi):
        i, j = lo % (nx + 1), lo // (nx + 1)
        di = hi % (nx + 1) - i
        dj = hi // (nx + 1) - j
        if periodic_x:
            i %= nx
        if periodic_y:
            j %= ny
        return (di, dj, i, j)

    return Mesh.from_cells(
        coords, np.array(cells), vertex_map, edge_key,
        periodic=(Lx if periodic_x else None, Ly if periodic_y else None))


def build_disk(refinement: int) -> Mesh:
    """Triangulation of the regular 6*2**refinement-gon inscribed in the unit circle.

    The six-triangle hexagon fan is refined uniformly and each lattice point
    (ring r, position a along the ring) is placed at radius r/n and angle
    2*pi*a/(6r), which puts the boundary ring on the circle at equal angles.
    """
    if refinement < 0:
        raise ValueError(f"refinement must be >= 0, got {refinement}")
    n = 2 ** refinement

    def vid(r, a):
        if r == 0:
            return 0
        return 1 + 3 * r * (r - 1) + (a % (6 * r))

    nv = 1 + 3 * n * (n + 1)
    coords = np.zeros((nv, 2))
    for r in range(1, n + 1):
        theta = 2 * np.pi * np.arange(6 * r) / (6 * r)
        rad = r / n
        idx = 1 + 3 * r * (r - 1) + np.arange(6 * r)
        coords[idx, 0] = rad * np.cos(theta)
        coords[idx, 1] = rad * np.sin(theta)
    # boundary ring: exact unit radius
    bidx = 1 + 3 * n * (n - 1) + np.arange(6 * n)
    coords[bidx] /= np.hypot(coords[bidx, 0], coords[bidx, 1])[:, None]

    def lattice(s, i, j):
        # i steps towards hexagon corner s, j towards corner s+1
        r = i + j
        return vid(r, s * r + j)

    cells = []
    for s in range(6):
        for i in range(n):
            for j in range(n - i):
                cells.append((lattice(s, i, j), lattice(s, i + 1, j), lattice(s, i, j + 1)))
                if i + j + 2 <= n:
                    cells.append((lattice(s, i + 1, j), lattice(s, i + 1, j + 1),
                                  lattice(s, i, j + 1)))
    cells = np.array(cells, dtype=np.int64)
    x = coords[cells]
    det = ((x[:, 1, 0] - x[:, 0, 0]) * (x[:, 2, 1] - x[:, 0, 1])
           - (x[:, 2, 0] - x[:, 0, 0]) * (x[:, 1, 1] - x[:, 0, 1]))
    flip = det < 0
    cells[flip] = cells[flip][:, [0, 2, 1]]
    return Mesh.from_cells(coords, cells)


def disk_polygon_area(refinement: int) -> float:
    m = 6 * 2 ** refinement
    return 0.5 * m * math.sin(2 * math.pi / m)


@dataclasses.dataclass
class ValidationReport:
    ok: bool
    euler_characteristic: int
    failures: list = dataclasses.field(default_factory=list)
    bad_cells: list = dataclasses.field(default_factory=list)
    bad_edges: list = dataclasses.field(default_factory=list)

    def __str__(self) -> str:
        status = "pass" if self.ok else "FAIL"
        lines = [f"mesh validation: {status} (chi={self.euler_characteristic})"]
        lines += [f"  - {f}" for f in self.failures]
        return "\n".join(lines)


def validate(mesh: Mesh) -> ValidationReport:
    """Check the mesh invariants; failures are collected, never raised."""
    failures = []
    bad_cells: list = []
    bad_edges: list = []

    det = np.linalg.det(mesh.jacobians())
    neg = np.flatnonzero(det <= 0)
    if len(neg):
        bad_cells.extend(int(c) for c in neg)
        failures.append(f"non-positive Jacobian in cells {neg.tolist()}")

    counts = np.bincount(mesh.cell_edges.ravel(), minlength=mesh.n_edges)
    over = np.flatnonzero(counts > 2)
    if len(over):
        bad_edges.extend(int(e) for e in over)
        failures.append(f"edges shared by more than two cells: {over.tolist()}")
    interior = np.flatnonzero(mesh.edge_cells[:, 1] >= 0)
    flat_e = mesh.cell_edges.ravel()
    flat_s = mesh.cell_edge_signs.ravel()
    sign_sum = np.bincount(flat_e, weights=flat_s, minlength=mesh.n_edges)
    same = interior[sign_sum[interior] != 0]
    if len(same):
        bad_edges.extend(int(e) for e in same)
        failures.append(f"interior edges with equal incidence signs: {same.tolist()}")

    # torus and periodic channel (annulus) have chi = 0, simply connected domains 1
    expected_chi = 0 if any(p is not None for p in mesh.periodic) else 1
    chi = mesh.euler_characteristic
    if chi != expected_chi:
        failures.append(f"Euler characteristic {chi}, expected {expected_chi}")

    if len(mesh.boundary_normals):
        err = np.abs(np.linalg.norm(mesh.boundary_normals, axis=1) - 1.0)
        if err.max() > 1e-14:
            failures.append(f"boundary normals not unit length (max err {err.max():.3e})")

    return ValidationReport(not failures, chi, failures, sorted(set(bad_cells)),
                            sorted(set(bad_edges)))


def periodic_edge_pairs(mesh: Mesh) -> list:
    """Pairs of distinct unwrapped edges identified by periodicity, with the shift between them."""
    by_edge: dict = {}
    for c in range(mesh.n_cells):
        for e in range(3):
            p = mesh.unwrapped_cells[c, (e + 1) % 3]
            q = mesh.unwrapped_cells[c, (e + 2) % 3]
            lo, hi = min(p, q), max(p, q)
            by_edge.setdefault(int(mesh.cell_edges[c, e]), set()).add((int(lo), int(hi)))
    pairs = []
    X = mesh.unwrapped_vertices
    for copies in by_edge.values():
        if len(copies) == 2:
            a, b = sorted(copies)
            pairs.append((a, b, X[b[0]] - X[a[0]]))
    return pairs


def write_ascii(mesh: Mesh, path) -> None:
    """Write the ``swemesh 1`` text format (non-periodic meshes only)."""
    if any(p is not None for p in mesh.periodic):
        raise ValueError("the swemesh format carries no periodic identification")
    lines = ["swemesh 1", f"V {mesh.n_vertices}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines.append(f"C {mesh.n_cells}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.cells]
    lines.append(f"B {len(mesh.boundary_edges)}")
    lines += [f"{a} {b}" for a, b in mesh.edges[mesh.boundary_edges]]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ascii(path) -> Mesh:
    tokens = Path(path).read_text().split()
    if tokens[:2] != ["swemesh", "1"]:
        raise ValueError(f"{path}: missing 'swemesh 1' header")
    pos = 2

    def section(tag, width, conv):
        nonlocal pos
        if tokens[pos] != tag:
            raise ValueError(f"{path}: expected section {tag!r}, found {tokens[pos]!r}")
        count = int(tokens[pos + 1])
        pos += 2
        vals = [conv(t) for t in tokens[pos:pos + count * width]]
        pos += count * width
        return np.array(vals).reshape(count, width)

    coords = section("V", 2, float)
    cells = section("C", 3, int).astype(np.int64)
    bnd = section("B", 2, int).astype(np.int64)
    mesh = Mesh.from_cells(coords, cells)
    listed = {tuple(sorted(e)) for e in bnd.tolist()}
    found = {tuple(sorted(e)) for e in mesh.edges[mesh.boundary_edges].tolist()}
    if listed != found:
        raise ValueError(f"{path}: boundary section does not match the cell topology")
    return mesh


def describe(mesh: Mesh) -> str:
    rep = validate(mesh)
    return (f"vertices={mesh.n_vertices} edges={mesh.n_edges} cells={mesh.n_cells} "
            f"boundary_edges={len(mesh.boundary_edges)} chi={mesh.euler_characteristic} "
            f"area={mesh.area:.12g} h_max={mesh.max_edge_length():.4g} "
            f"valid={'yes' if rep.ok else 'no'}")
