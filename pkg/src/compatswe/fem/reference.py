"""Reference elements for the compatible triple CG_k, BDM_{k-1}, DG_{k-2}.

Bases are built as dual bases of explicit degree-of-freedom functionals
over monomials.  Reference vertices are (0,0), (1,0), (0,1); local edge e
joins vertex e+1 to vertex e+2 (indices mod 3), traversed counterclockwise.
"""
from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import legval

from .quadrature import QuadratureRule, gauss_interval, quadrature_rule

LAGRANGE = "Lagrange"
BDM = "BDM"
DG = "DiscontinuousLagrange"

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

SUPPORTED = {(LAGRANGE, 2), (LAGRANGE, 3), (BDM, 1), (BDM, 2), (DG, 0), (DG, 1)}


def _exponents(p: int) -> list:
    return [(d - b, b) for d in range(p + 1) for b in range(d + 1)]


def _mono(exps, pts):
    x, y = pts[:, 0], pts[:, 1]
    return np.stack([x ** a * y ** b for a, b in exps], axis=-1)


def _mono_grad(exps, pts):
    x, y = pts[:, 0], pts[:, 1]
    gx = [a * x ** max(a - 1, 0) * y ** b if a else np.zeros_like(x) for a, b in exps]
    gy = [b * x ** a * y ** max(b - 1, 0) if b else np.zeros_like(x) for a, b in exps]
    return np.stack([np.stack(gx, -1), np.stack(gy, -1)], axis=-1)


def edge_endpoints(e: int) -> tuple[np.ndarray, np.ndarray]:
    return REF_VERTICES[(e + 1) % 3], REF_VERTICES[(e + 2) % 3]


@dataclasses.dataclass(frozen=True, eq=False)
class ReferenceElement:
    """Dual basis on the reference triangle plus its tabulation on a rule.

    ``entity_dofs`` maps 'vertex' / 'edge' to a list of three local dof
    lists and 'interior' to one list.  Edge dofs of Lagrange elements are
    ordered along the counterclockwise traversal of the edge; BDM edge dofs
    are flux moments against Legendre polynomials in that parameter.
    """

    family: str
    degree: int
    dof_count: int
    entity_dofs: dict
    coeffs: np.ndarray
    rule: QuadratureRule
    values: np.ndarray
    derivatives: Optional[np.ndarray]
    divergence: Optional[np.ndarray]

    @property
    def is_vector(self) -> bool:
        return self.family == BDM

    @property
    def _exps(self):
        return _exponents(self.degree)

    def tabulate(self, points: np.ndarray) -> np.ndarray:
        """Basis values at reference points: (n, dofs) or (n, dofs, 2)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        m = _mono(self._exps, points)
        if not self.is_vector:
            return m @ self.coeffs
        nm = m.shape[1]
        vx = m @ self.coeffs[:nm]
        vy = m @ self.coeffs[nm:]
        return np.stack([vx, vy], axis=-1)

    def tabulate_derivatives(self, points: np.ndarray) -> np.ndarray:
        """Reference gradients of a scalar basis: (n, dofs, 2)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        g = _mono_grad(self._exps, points)
        return np.einsum("pmd,mi->pid", g, self.coeffs)

    def tabulate_divergence(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        g = _mono_grad(self._exps, points)
        nm = g.shape[1]
        return g[:, :, 0] @ self.coeffs[:nm] + g[:, :, 1] @ self.coeffs[nm:]


def lagrange_nodes(p: int) -> np.ndarray:
    nodes = [v for v in REF_VERTICES]
    for e in range(3):
        a, b = edge_endpoints(e)
        nodes += [a + (t / p) * (b - a) for t in range(1, p)]
    nodes += [np.array([i / p, j / p]) for j in range(1, p) for i in range(1, p - j)]
    return np.array(nodes).reshape(-1, 2)


def _lagrange_layout(p: int) -> dict:
    ne = p - 1
    return {
        "vertex": [[0], [1], [2]],
        "edge": [list(range(3 + e * ne, 3 + (e + 1) * ne)) for e in range(3)],
        "interior": list(range(3 + 3 * ne, (p + 1) * (p + 2) // 2)),
    }


def _dg_nodes(p: int) -> np.ndarray:
    if p == 0:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]])
    return np.array([[i / p, j / p] for j in range(p + 1) for i in range(p + 1 - j)])


def _bdm_functionals(m: int) -> np.ndarray:
    """Rows: functionals applied to the vector monomial basis (x-part, then y-part)."""
    exps = _exponents(m)
    nm = len(exps)
    rows = []
    s, w = gauss_interval(2 * m + 2)
    for e in range(3):
        a, b = edge_endpoints(e)
        t = b - a
        n_scaled = np.array([t[1], -t[0]])
        pts = a + s[:, None] * t
        mono = _mono(exps, pts)
        for j in range(m + 1):
            cj = np.zeros(j + 1)
            cj[j] = 1.0
            pj = legval(2 * s - 1, cj)
            wt = w * pj
            rows.append(np.concatenate([n_scaled[0] * wt @ mono, n_scaled[1] * wt @ mono]))
    if m >= 2:
        rule = quadrature_rule(2 * m + 2)
        pts = rule.points
        mono = _mono(exps, pts)
        wq = rule.weights
        for a, b in _exponents(m - 1)[1:]:
            gx, gy = _mono_grad([(a, b)], pts)[:, 0, :].T
            rows.append(np.concatenate([(wq * gx) @ mono, (wq * gy) @ mono]))
        x, y = pts[:, 0], pts[:, 1]
        bub = x * y * (1 - x - y)
        dbx = y * (1 - 2 * x - y)
        dby = x * (1 - x - 2 * y)
        for a, b in _exponents(m - 2):
            pv = x ** a * y ** b
            px = a * x ** max(a - 1, 0) * y ** b if a else 0.0 * x
            py = b * x ** a * y ** max(b - 1, 0) if b else 0.0 * x
            # curl (d/dy, -d/dx) of bubble * monomial
            cx = dby * pv + bub * py
            cy = -(dbx * pv + bub * px)
            rows.append(np.concatenate([(wq * cx) @ mono, (wq * cy) @ mono]))
    V = np.array(rows)
    assert V.shape == (2 * nm, 2 * nm), V.shape
    return V


def build_reference(family: str, degree: int, rule: QuadratureRule) -> ReferenceElement:
    """Construct and tabulate a reference element on ``rule``."""
    if (family, degree) not in SUPPORTED:
        raise ValueError(f"unsupported element {family} degree {degree}")
    exps = _exponents(degree)
    if family == LAGRANGE:
        V = _mono(exps, lagrange_nodes(degree))
        layout = _lagrange_layout(degree)
    elif family == DG:
        V = _mono(exps, _dg_nodes(degree))
        layout = {"vertex": [[], [], []], "edge": [[], [], []],
                  "interior": list(range(len(exps)))}
    else:
        V = _bdm_functionals(degree)
        ne = degree + 1
        layout = {"vertex": [[], [], []],
                  "edge": [list(range(e * ne, (e + 1) * ne)) for e in range(3)],
                  "interior": list(range(3 * ne, V.shape[0]))}
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > 1e12:
        raise ValueError(f"{family} degree {degree}: dof functionals not unisolvent (cond={cond:.3e})")
    coeffs = np.linalg.solve(V, np.eye(V.shape[0]))
    ref = ReferenceElement(family, degree, V.shape[0], layout, coeffs, rule,
                           values=None, derivatives=None, divergence=None)
    values = ref.tabulate(rule.points)
    derivs = None if ref.is_vector else ref.tabulate_derivatives(rule.points)
    div = ref.tabulate_divergence(rule.points) if ref.is_vector else None
    return dataclasses.replace(ref, values=values, derivatives=derivs, divergence=div)
