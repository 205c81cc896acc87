"""Sparse operators and residual vectors for the weak forms of the scheme.

Every pairing is evaluated with the quadrature rule the spaces were
tabulated on.  The conservation identities of the scheme are exact only
because all forms share that one rule.
"""
from __future__ import annotations

import dataclasses
import logging
from typing import Any, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem.quadrature import gauss_interval
from .fem.reference import edge_endpoints
from .fem.spaces import Field, FunctionSpace

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised when a sparse factorization fails or a solve misses its residual bound."""


def perp(v: np.ndarray) -> np.ndarray:
    """k x v for arrays whose last axis holds (x, y) components."""
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


# -- form tags -----------------------------------------------------------------

@dataclasses.dataclass(frozen=True, eq=False)
class Mass:
    space: FunctionSpace


@dataclasses.dataclass(frozen=True, eq=False)
class Div:
    """<div w, phi>; rows follow ``test``, which may be the V1 or the V2 space."""
    test: FunctionSpace
    trial: FunctionSpace


@dataclasses.dataclass(frozen=True, eq=False)
class Curl:
    """<perp-grad gamma, u>; rows follow ``test`` (V0 or V1)."""
    test: FunctionSpace
    trial: FunctionSpace


@dataclasses.dataclass(frozen=True, eq=False)
class PerpProj:
    """<w, qhat v^perp> on V1 x V1; antisymmetric for any qhat."""
    space: FunctionSpace
    qhat: Any


@dataclasses.dataclass(frozen=True, eq=False)
class GradScalar:
    """<grad gamma, qhat F>; rows follow ``test`` (V0 or V1)."""
    test: FunctionSpace
    trial: FunctionSpace
    qhat: Any = 1.0


@dataclasses.dataclass(frozen=True, eq=False)
class WeightedMass:
    space: FunctionSpace
    Dhat: Any


@dataclasses.dataclass(frozen=True, eq=False)
class BoundaryTangent:
    """<<gamma, n^perp . u>> on the boundary; V0 rows, V1 columns."""
    test: FunctionSpace
    trial: FunctionSpace


@dataclasses.dataclass(frozen=True, eq=False)
class Source:
    """<v, g> for a pointwise or field-valued g (only used with assemble_vector)."""
    space: FunctionSpace
    g: Any


FORM_TAGS = (Mass, Div, Curl, PerpProj, GradScalar, WeightedMass, BoundaryTangent, Source)


# -- coefficient handling -------------------------------------------------------

def coefficient_values(coef, space: FunctionSpace, vector: bool = False) -> np.ndarray:
    """Quadrature-point values of a scalar, callable f(x, y), Field or (nc, nq) array."""
    shape = space.JxW.shape + ((2,) if vector else ())
    if isinstance(coef, Field):
        if coef.space.mesh is not space.mesh:
            raise ValueError("coefficient field lives on a different mesh")
        vals = coef.values()
    elif callable(coef):
        vals = np.asarray(coef(space.qpoints[..., 0], space.qpoints[..., 1]), dtype=float)
    else:
        vals = np.asarray(coef, dtype=float)
    return np.broadcast_to(vals, shape)


def _check_mesh(*spaces):
    m = spaces[0].mesh
    for s in spaces[1:]:
        if s.mesh is not m:
            raise ValueError("spaces are defined on different meshes")


# -- boundary tabulation ---------------------------------------------------------

@dataclasses.dataclass
class BoundaryQuadrature:
    cells: np.ndarray        # (nb,)
    weights: np.ndarray      # (nb, ns), includes the edge length
    normals: np.ndarray      # (nb, 2)
    points: np.ndarray       # (nb, ns, 2) physical


def boundary_quadrature(space: FunctionSpace) -> tuple[BoundaryQuadrature, np.ndarray]:
    """Boundary edge rule and the space's basis values there: (nb, ns, nloc[, 2])."""
    mesh = space.mesh
    ref = space.element
    s, w = gauss_interval(ref.rule.degree)
    cells = mesh.boundary_local[:, 0]
    local_e = mesh.boundary_local[:, 1]
    nb, ns = len(cells), len(s)
    J = mesh.jacobians()[cells] if nb else np.zeros((0, 2, 2))
    det = np.linalg.det(J) if nb else np.zeros(0)
    ref_pts = np.zeros((nb, ns, 2))
    for e in range(3):
        a, b = edge_endpoints(e)
        ref_pts[local_e == e] = a + s[:, None] * (b - a)
    phys = mesh.cell_coords[cells, 0][:, None, :] + np.einsum("bij,bsj->bsi", J, ref_pts)
    lengths = np.zeros(nb)
    for k in range(nb):
        c, e = cells[k], local_e[k]
        lengths[k] = np.linalg.norm(mesh.cell_coords[c, (e + 2) % 3] - mesh.cell_coords[c, (e + 1) % 3])
    sign = space.cell_signs[cells]
    if ref.is_vector:
        tab = np.zeros((nb, ns, ref.dof_count, 2))
        for e in range(3):
            sel = local_e == e
            if not np.any(sel):
                continue
            a, b = edge_endpoints(e)
            phi = ref.tabulate(a + s[:, None] * (b - a))
            tab[sel] = np.einsum("bij,skj->bski", J[sel], phi) / det[sel, None, None, None]
        tab *= sign[:, None, :, None]
    else:
        tab = np.zeros((nb, ns, ref.dof_count))
        for e in range(3):
            sel = local_e == e
            a, b = edge_endpoints(e)
            tab[sel] = ref.tabulate(a + s[:, None] * (b - a))[None]
    bq = BoundaryQuadrature(cells, lengths[:, None] * w[None, :], mesh.boundary_normals, phys)
    return bq, tab


# -- assembly ---------------------------------------------------------------------

def _scatter(test: FunctionSpace, trial: FunctionSpace, local: np.ndarray, cells=None,
             restricted=(None, None)) -> sp.csr_matrix:
    rfree = _free(test, restricted[0])
    cfree = _free(trial, restricted[1])
    rmap = np.full(test.full_dim, -1, dtype=np.int64)
    rmap[rfree] = np.arange(len(rfree))
    cmap = np.full(trial.full_dim, -1, dtype=np.int64)
    cmap[cfree] = np.arange(len(cfree))
    tdofs = test.cell_dofs if cells is None else test.cell_dofs[cells]
    sdofs = trial.cell_dofs if cells is None else trial.cell_dofs[cells]
    rows = np.broadcast_to(rmap[tdofs][:, :, None], local.shape).ravel()
    cols = np.broadcast_to(cmap[sdofs][:, None, :], local.shape).ravel()
    keep = (rows >= 0) & (cols >= 0)
    A = sp.coo_matrix((local.ravel()[keep], (rows[keep], cols[keep])),
                      shape=(len(rfree), len(cfree)))
    return A.tocsr()


def _free(space: FunctionSpace, restricted: Optional[bool]) -> np.ndarray:
    if restricted is None or restricted == space.restricted:
        return space.free
    if restricted:
        keep = np.ones(space.full_dim, dtype=bool)
        keep[space.boundary_dofs] = False
        return np.flatnonzero(keep)
    return np.arange(space.full_dim)


def _local_matrix(tag) -> tuple[FunctionSpace, FunctionSpace, np.ndarray, Optional[np.ndarray]]:
    if isinstance(tag, Mass):
        V = tag.space
        sub = "cq,cqid,cqjd->cij" if V.is_vector else "cq,cqi,cqj->cij"
        return V, V, np.einsum(sub, V.JxW, V.vals, V.vals), None
    if isinstance(tag, Div):
        a, b = tag.test, tag.trial
        _check_mesh(a, b)
        if a.is_vector:
            return a, b, np.einsum("cq,cqi,cqj->cij", a.JxW, a.divs, b.vals), None
        return a, b, np.einsum("cq,cqi,cqj->cij", a.JxW, a.vals, b.divs), None
    if isinstance(tag, Curl):
        a, b = tag.test, tag.trial
        _check_mesh(a, b)
        if a.is_vector:
            return a, b, np.einsum("cq,cqid,cqjd->cij", a.JxW, a.vals, perp(b.grads)), None
        return a, b, np.einsum("cq,cqid,cqjd->cij", a.JxW, perp(a.grads), b.vals), None
    if isinstance(tag, PerpProj):
        V = tag.space
        q = coefficient_values(tag.qhat, V)
        return V, V, np.einsum("cq,cqid,cqjd->cij", V.JxW * q, V.vals, perp(V.vals)), None
    if isinstance(tag, GradScalar):
        a, b = tag.test, tag.trial
        _check_mesh(a, b)
        q = coefficient_values(tag.qhat, a)
        if a.is_vector:
            return a, b, np.einsum("cq,cqid,cqjd->cij", a.JxW * q, a.vals, b.grads), None
        return a, b, np.einsum("cq,cqid,cqjd->cij", a.JxW * q, a.grads, b.vals), None
    if isinstance(tag, WeightedMass):
        V = tag.space
        D = coefficient_values(tag.Dhat, V)
        return V, V, np.einsum("cq,cqi,cqj->cij", V.JxW * D, V.vals, V.vals), None
    if isinstance(tag, BoundaryTangent):
        a, b = tag.test, tag.trial
        _check_mesh(a, b)
        bq, ta = boundary_quadrature(a)
        _, tb = boundary_quadrature(b)
        npp = perp(bq.normals)
        tang = np.einsum("bskd,bd->bsk", tb, npp)
        local = np.einsum("bs,bsi,bsj->bij", bq.weights, ta, tang)
        return a, b, local, bq.cells
    raise TypeError(f"unknown form tag {type(tag).__name__}")


def assemble(tag, restricted: tuple = (None, None)) -> sp.csr_matrix:
    """Sparse matrix of the pairing named by ``tag``.

    ``restricted`` overrides, per argument, whether boundary dofs are removed
    (None keeps each space's own setting).
    """
    test, trial, local, cells = _local_matrix(tag)
    return _scatter(test, trial, local, cells, restricted)


def assemble_vector(tag, field: Optional[Field] = None, restricted: Optional[bool] = None) -> np.ndarray:
    """The pairing with its trial argument fixed to ``field`` (rows = test space).

    ``restricted`` overrides whether boundary rows of the test space are dropped.
    """
    if isinstance(tag, BoundaryTangent):
        if field is None:
            raise ValueError("BoundaryTangent needs a field for its trial argument")
        return assemble(tag, (restricted, None)) @ field.coefficients
    test = tag.space if isinstance(tag, (Source, Mass, PerpProj, WeightedMass)) else tag.test
    free = _free(test, restricted)
    if isinstance(tag, Source):
        vals = coefficient_values(tag.g, test, vector=test.is_vector)
        return test.test_integral(vals, free=free)
    if field is None:
        raise ValueError(f"{type(tag).__name__} needs a field for its trial argument")
    if field.space.mesh is not test.mesh:
        raise ValueError("field lives on a different mesh")
    if isinstance(tag, Mass):
        return test.test_integral(field.values(), free=free)
    if isinstance(tag, Div):
        if test.is_vector:
            return test.test_integral(field.values(), "div", free=free)
        return test.test_integral(field.space.divergences(field.coefficients), free=free)
    if isinstance(tag, Curl):
        if test.is_vector:
            return test.test_integral(perp(field.space.gradients(field.coefficients)), free=free)
        # perp-grad(gamma) . u = grad(gamma) . (u_y, -u_x)
        return test.test_integral(-perp(field.values()), "grad", free=free)
    if isinstance(tag, PerpProj):
        q = coefficient_values(tag.qhat, test)
        return test.test_integral(q[..., None] * perp(field.values()), free=free)
    if isinstance(tag, GradScalar):
        q = coefficient_values(tag.qhat, test)
        if test.is_vector:
            g = q[..., None] * field.space.gradients(field.coefficients)
            return test.test_integral(g, free=free)
        return test.test_integral(q[..., None] * field.values(), "grad", free=free)
    if isinstance(tag, WeightedMass):
        D = coefficient_values(tag.Dhat, test)
        return test.test_integral(D * field.values(), free=free)
    raise TypeError(f"unknown form tag {type(tag).__name__}")


# -- linear solves -----------------------------------------------------------------

class Factorization:
    """Sparse LU factorization reused across right-hand sides."""

    def __init__(self, A: sp.spmatrix, spd_hint: bool = False):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise SolverError(f"matrix is not square: {A.shape}")
        self.A = A
        self.spd_hint = spd_hint
        self.n = A.shape[0]
        if self.n == 0:
            self._lu = None
            return
        try:
            # SPD mass-type matrices: symmetric ordering keeps fill low
            self._lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A" if spd_hint else "COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"sparse LU failed ({exc}); n={self.n}") from exc
        udiag = np.abs(self._lu.U.diagonal())
        if udiag.size and udiag.min() <= 1e-14 * udiag.max():
            piv = int(np.argmin(udiag))
            raise SolverError(f"near-singular factorization: pivot {piv} has |u|={udiag[piv]:.3e} "
                              f"vs max {udiag.max():.3e}")

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self._lu is None:
            return np.zeros(0)
        return self._lu.solve(np.asarray(b, dtype=float))


def solve(A: sp.spmatrix, b: np.ndarray, spd_hint: bool = False, check: bool = True) -> np.ndarray:
    """Direct sparse solve; checks ||Ax - b|| <= 1e-12 (||A|| ||x|| + ||b||)."""
    fac = Factorization(A, spd_hint)
    x = fac.solve(b)
    if check:
        r = np.linalg.norm(A @ x - b, np.inf)
        anorm = spla.norm(sp.csr_matrix(A), np.inf) if A.shape[0] else 0.0
        bound = 1e-12 * (anorm * np.linalg.norm(x, np.inf) + np.linalg.norm(b, np.inf))
        if r > bound:
            raise SolverError(f"solve residual {r:.3e} exceeds bound {bound:.3e}")
    return x
