"""Global function spaces, fields, evaluation and L2 projection."""
from __future__ import annotations

import dataclasses
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..mesh import Mesh
from .quadrature import QuadratureRule, quadrature_rule
from .reference import BDM, DG, LAGRANGE, ReferenceElement, build_reference


class FunctionSpace:
    """A finite element space over a mesh, tabulated on one shared quadrature rule.

    Coefficient vectors of a restricted space (V̊0, V̊1) live in a numbering
    from which boundary dofs have been removed; ``full_dim`` counts all dofs.
    """

    def __init__(self, mesh: Mesh, element: ReferenceElement, restricted: bool = False):
        self.mesh = mesh
        self.element = element
        self.family = element.family
        self.degree = element.degree
        self.rule = element.rule
        self.restricted = bool(restricted)
        self.cell_dofs, self.cell_signs, self.full_dim, self._boundary_dofs = _dof_map(mesh, element)
        if self.restricted:
            keep = np.ones(self.full_dim, dtype=bool)
            keep[self._boundary_dofs] = False
        else:
            keep = np.ones(self.full_dim, dtype=bool)
        self.free = np.flatnonzero(keep)
        self.full_to_free = np.full(self.full_dim, -1, dtype=np.int64)
        self.full_to_free[self.free] = np.arange(len(self.free))
        self._tabulate()

    # -- construction helpers -------------------------------------------------
    def _tabulate(self):
        mesh, ref = self.mesh, self.element
        J = mesh.jacobians()
        det = np.linalg.det(J)
        self.detJ = det
        self.JxW = np.abs(det)[:, None] * ref.rule.weights[None, :]
        x0 = mesh.cell_coords[:, 0]
        self.qpoints = x0[:, None, :] + np.einsum("cij,qj->cqi", J, ref.rule.points)
        sign = self.cell_signs[:, None, :]
        if ref.is_vector:
            self.vals = np.einsum("cij,qkj->cqki", J, ref.values) / det[:, None, None, None]
            self.vals *= sign[..., None]
            self.divs = ref.divergence[None] / det[:, None, None] * sign
            self.grads = None
        else:
            Jinv = np.linalg.inv(J)
            self.vals = np.broadcast_to(ref.values[None], (mesh.n_cells,) + ref.values.shape)
            self.grads = np.einsum("cji,qkj->cqki", Jinv, ref.derivatives)
            self.divs = None

    def with_restriction(self, restricted: bool) -> "FunctionSpace":
        return FunctionSpace(self.mesh, self.element, restricted)

    # -- basic properties -----------------------------------------------------
    @property
    def dim(self) -> int:
        return len(self.free)

    @property
    def is_vector(self) -> bool:
        return self.element.is_vector

    @property
    def boundary_dofs(self) -> np.ndarray:
        return self._boundary_dofs

    def __repr__(self) -> str:
        ring = "restricted " if self.restricted else ""
        return f"<{ring}{self.family}{self.degree} space, dim={self.dim}>"

    def extend(self, coefs: np.ndarray) -> np.ndarray:
        """Full-numbering coefficients (zeros on removed boundary dofs)."""
        full = np.zeros(self.full_dim)
        full[self.free] = coefs
        return full

    def local(self, coefs: np.ndarray) -> np.ndarray:
        return self.extend(coefs)[self.cell_dofs]

    # -- quadrature-point evaluation ------------------------------------------
    def values(self, coefs):
        loc = self.local(coefs)
        if self.is_vector:
            return np.einsum("cqkd,ck->cqd", self.vals, loc)
        return np.einsum("cqk,ck->cq", self.vals, loc)

    def gradients(self, coefs):
        return np.einsum("cqkd,ck->cqd", self.grads, self.local(coefs))

    def divergences(self, coefs):
        return np.einsum("cqk,ck->cq", self.divs, self.local(coefs))

    # -- scatter of local contributions ---------------------------------------
    def scatter_vector(self, local: np.ndarray, free: np.ndarray | None = None) -> np.ndarray:
        """Sum (nc, nloc) cell contributions into a vector on the space's numbering.

        ``free`` selects other full-numbering indices (e.g. to keep boundary rows).
        """
        full = np.bincount(self.cell_dofs.ravel(), weights=local.ravel(), minlength=self.full_dim)
        return full[self.free if free is None else free]

    def test_integral(self, g, kind: str = "val", free: np.ndarray | None = None) -> np.ndarray:
        """Vector of integrals of ``g`` against each basis function (or its grad/div)."""
        if kind == "val":
            basis = self.vals
        elif kind == "grad":
            basis = self.grads
        elif kind == "div":
            basis = self.divs
        else:
            raise ValueError(kind)
        if basis.ndim == 4:
            local = np.einsum("cq,cqkd,cqd->ck", self.JxW, basis, g)
        else:
            local = np.einsum("cq,cqk,cq->ck", self.JxW, basis, g)
        return self.scatter_vector(local, free)

    def mass_matrix(self) -> sp.csr_matrix:
        if self.is_vector:
            local = np.einsum("cq,cqid,cqjd->cij", self.JxW, self.vals, self.vals)
        else:
            local = np.einsum("cq,cqi,cqj->cij", self.JxW, self.vals, self.vals)
        return scatter_matrix(self, self, local)


def scatter_matrix(test: FunctionSpace, trial: FunctionSpace, local: np.ndarray) -> sp.csr_matrix:
    """Sum (nc, ni, nj) cell matrices into a sparse matrix on the restricted numberings."""
    nc, ni, nj = local.shape
    rows = np.broadcast_to(test.full_to_free[test.cell_dofs][:, :, None], local.shape).ravel()
    cols = np.broadcast_to(trial.full_to_free[trial.cell_dofs][:, None, :], local.shape).ravel()
    vals = local.ravel()
    keep = (rows >= 0) & (cols >= 0)
    A = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(test.dim, trial.dim))
    return A.tocsr()


def _dof_map(mesh: Mesh, ref: ReferenceElement):
    nc = mesh.n_cells
    n = ref.dof_count
    dofs = np.zeros((nc, n), dtype=np.int64)
    signs = np.ones((nc, n))
    ent = ref.entity_dofs
    nv, ne = mesh.n_vertices, mesh.n_edges
    per_vertex = len(ent["vertex"][0])
    per_edge = len(ent["edge"][0])
    per_cell = len(ent["interior"])
    edge_offset = nv * per_vertex
    cell_offset = edge_offset + ne * per_edge
    full_dim = cell_offset + nc * per_cell

    for v in range(3):
        for t, k in enumerate(ent["vertex"][v]):
            dofs[:, k] = mesh.cells[:, v] * per_vertex + t
    for e in range(3):
        ge = mesh.cell_edges[:, e]
        sgn = mesh.cell_edge_signs[:, e]
        for t, k in enumerate(ent["edge"][e]):
            if ref.family == BDM:
                dofs[:, k] = edge_offset + ge * per_edge + t
                signs[:, k] = sgn.astype(float) ** (t + 1)
            else:
                tt = np.where(sgn > 0, t, per_edge - 1 - t)
                dofs[:, k] = edge_offset + ge * per_edge + tt
    for t, k in enumerate(ent["interior"]):
        dofs[:, k] = cell_offset + np.arange(nc) * per_cell + t

    bverts = mesh.boundary_vertices()
    bedges = mesh.boundary_edges
    bd = [bverts[:, None] * per_vertex + np.arange(per_vertex)[None, :],
          edge_offset + bedges[:, None] * per_edge + np.arange(per_edge)[None, :]]
    boundary = np.unique(np.concatenate([b.ravel() for b in bd])).astype(np.int64)
    return dofs, signs, full_dim, boundary


_FAMILY_ALIASES = {"CG": LAGRANGE, "Lagrange": LAGRANGE, "BDM": BDM, "DG": DG,
                   "DiscontinuousLagrange": DG}


def build_space(mesh: Mesh, family: str, degree: int, restricted: bool = False,
                rule: QuadratureRule | None = None, exactness: int | None = None) -> FunctionSpace:
    """Build a global space; the quadrature rule defaults to exactness 3*(degree+1)."""
    fam = _FAMILY_ALIASES.get(family)
    if fam is None:
        raise ValueError(f"unknown family {family!r}")
    if rule is None:
        k = {LAGRANGE: degree, BDM: degree + 1, DG: degree + 2}[fam]
        rule = quadrature_rule(exactness if exactness is not None else 3 * k)
    return FunctionSpace(mesh, build_reference(fam, degree, rule), restricted)


@dataclasses.dataclass(eq=False)
class Field:
    """Coefficient vector tied to a function space."""

    space: FunctionSpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.dim,):
            raise ValueError(f"coefficient length {self.coefficients.shape} does not match "
                             f"space dimension {self.space.dim}")

    def copy(self) -> "Field":
        return Field(self.space, self.coefficients.copy())

    def values(self):
        return self.space.values(self.coefficients)


def evaluate(field: Field, cell: int, points: np.ndarray) -> np.ndarray:
    """Physical values of ``field`` at reference ``points`` of one cell."""
    space = field.space
    mesh = space.mesh
    if not 0 <= cell < mesh.n_cells:
        raise IndexError(f"cell {cell} out of range [0, {mesh.n_cells})")
    ref = space.element
    loc = space.extend(field.coefficients)[space.cell_dofs[cell]] * space.cell_signs[cell]
    phi = ref.tabulate(points)
    if ref.is_vector:
        J = mesh.jacobians()[cell]
        u_ref = np.einsum("pkd,k->pd", phi, loc)
        return u_ref @ J.T / np.linalg.det(J)
    return phi @ loc


def physical_points(mesh: Mesh, cell: int, points: np.ndarray) -> np.ndarray:
    J = mesh.jacobians()[cell]
    return mesh.cell_coords[cell, 0] + np.asarray(points) @ J.T


def project(func: Callable, space: FunctionSpace) -> Field:
    """Global L2 projection of a pointwise function ``func(x, y)`` into ``space``.

    Vector spaces expect ``func`` to return an array whose last axis has length 2.
    """
    x = space.qpoints[..., 0]
    y = space.qpoints[..., 1]
    g = np.asarray(func(x, y), dtype=float)
    if space.is_vector:
        g = np.broadcast_to(g, x.shape + (2,))
    else:
        g = np.broadcast_to(g, x.shape)
    b = space.test_integral(g)
    M = space.mass_matrix().tocsc()
    try:
        lu = spla.splu(M)
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(f"singular mass matrix for {space!r}: {exc}") from exc
    return Field(space, lu.solve(b))


def l2_error(field: Field, exact: Callable) -> float:
    """L2 norm of field - exact over the mesh, using the space's rule."""
    space = field.space
    x = space.qpoints[..., 0]
    y = space.qpoints[..., 1]
    diff = field.values() - np.asarray(exact(x, y))
    if diff.ndim == 3:
        sq = np.sum(diff ** 2, axis=-1)
    else:
        sq = diff ** 2
    return float(np.sqrt(np.sum(space.JxW * sq)))
