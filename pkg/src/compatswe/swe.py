"""Compatible finite element discretisation of the rotating shallow water equations.

Prognostic variables are the velocity u in V̊1 (BDM, normal component zero
on slip walls), the depth D in V2 (DG) and the mass-weighted vorticity Z in
V0 (CG).  Z carries the potential vorticity q through <gamma, qD> = <gamma, Z>
and evolves by the flux form <gamma, Z_t> = <grad gamma, qF>, which keeps the
boundary part of the vorticity prognostic.

Schemes:
  ``prognostic_Z``  the boundary-aware scheme above;
  ``no_boundary``   the original scheme on a mesh without boundary (q is
                    diagnosed from u, V1 unrestricted);
  ``naive``         q diagnosed from u with the boundary integral every time;
                    kept as a negative control, it does not conserve enstrophy.
"""
from __future__ import annotations

import dataclasses
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .assembly import (BoundaryTangent, Curl, Div, Factorization, PerpProj, SolverError,
                       assemble, perp)
from .fem.quadrature import quadrature_rule
from .fem.reference import BDM, DG, LAGRANGE, build_reference
from .fem.spaces import Field, FunctionSpace, project, scatter_matrix
from .mesh import Mesh

SCHEMES = ("no_boundary", "prognostic_Z", "naive")


class PositivityError(ValueError):
    """Layer depth is not strictly positive at some quadrature point."""


@dataclasses.dataclass(frozen=True)
class Physics:
    """Gravity and a Coriolis parameter f = f0 + beta * y."""

    g: float = 1.0
    f0: float = 0.0
    beta: float = 0.0

    def f(self, x, y):
        return self.f0 + self.beta * np.asarray(y) + 0.0 * np.asarray(x)


@dataclasses.dataclass
class State:
    u: Field
    D: Field
    Z: Field
    t: float = 0.0
    scheme: str = "prognostic_Z"

    def copy(self) -> "State":
        return State(self.u.copy(), self.D.copy(), self.Z.copy(), self.t, self.scheme)


@dataclasses.dataclass
class Diagnostics:
    F: Field
    q: Field


@dataclasses.dataclass(frozen=True)
class ConservedSet:
    H: float
    Q: float
    Zens: float
    M: float


class ShallowWaterModel:
    """Spaces, constant operators and factorizations for one mesh and degree k."""

    def __init__(self, mesh: Mesh, degree: int = 2, scheme: str = "prognostic_Z",
                 physics: Physics = Physics(), quadrature_degree: Optional[int] = None):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
        if degree not in (2, 3):
            raise ValueError(f"degree k must be 2 or 3, got {degree}")
        if scheme == "no_boundary" and mesh.has_boundary:
            raise ValueError("scheme 'no_boundary' needs a mesh without boundary")
        self.mesh = mesh
        self.k = degree
        self.scheme = scheme
        self.physics = physics
        self.quadrature_degree = 3 * degree if quadrature_degree is None else quadrature_degree
        rule = quadrature_rule(self.quadrature_degree)
        self.rule = rule
        lag = build_reference(LAGRANGE, degree, rule)
        self.V0 = FunctionSpace(mesh, lag, restricted=False)
        self.V0r = FunctionSpace(mesh, lag, restricted=True)
        self.V1 = FunctionSpace(mesh, build_reference(BDM, degree - 1, rule),
                                restricted=(scheme != "no_boundary"))
        self.V2 = FunctionSpace(mesh, build_reference(DG, degree - 2, rule), restricted=False)

        self.M0 = self.V0.mass_matrix()
        self.M1 = self.V1.mass_matrix()
        self.M2 = self.V2.mass_matrix()
        self.M0_solver = Factorization(self.M0, spd_hint=True)
        self.M1_solver = Factorization(self.M1, spd_hint=True)
        self.M2_solver = Factorization(self.M2, spd_hint=True)
        # B[i, j] = <phi_i, div w_j>
        self.B = assemble(Div(self.V2, self.V1))
        # C[i, j] = <perp-grad gamma_i, w_j>
        self.C = assemble(Curl(self.V0, self.V1))
        # T[i, j] = <<gamma_i, n^perp . w_j>>
        self.T = assemble(BoundaryTangent(self.V0, self.V1))
        self.f_quad = np.broadcast_to(
            physics.f(self.V0.qpoints[..., 0], self.V0.qpoints[..., 1]), self.V0.JxW.shape)
        self.f_vec = self.V0.test_integral(self.f_quad)
        self._coriolis = None
        self._picard_cache: dict = {}

    # -- helpers ---------------------------------------------------------------
    @property
    def g(self) -> float:
        return self.physics.g

    def field(self, space: FunctionSpace, coefs=None) -> Field:
        return Field(space, np.zeros(space.dim) if coefs is None else coefs)

    def coriolis_matrix(self) -> sp.csr_matrix:
        """<w_i, f w_j^perp> on V1."""
        if self._coriolis is None:
            self._coriolis = assemble(PerpProj(self.V1, self.f_quad))
        return self._coriolis

    def check_positive(self, D_quad: np.ndarray) -> None:
        dmin = float(np.min(D_quad))
        if not dmin > 0:
            c = int(np.unravel_index(np.argmin(D_quad), D_quad.shape)[0])
            raise PositivityError(f"layer depth {dmin:.3e} <= 0 in cell {c}")

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(self.V0.JxW * values))

    # -- diagnostics -----------------------------------------------------------
    def diagnose_F(self, u: Field, D: Field) -> Field:
        """Mass flux F in V̊1 with <v, F - uD> = 0."""
        Dq = D.values()
        self.check_positive(Dq)
        b = self.V1.test_integral(u.values() * Dq[..., None])
        return Field(self.V1, self.M1_solver.solve(b))

    def weighted_mass(self, D_quad: np.ndarray) -> sp.csr_matrix:
        V = self.V0
        local = np.einsum("cq,cqi,cqj->cij", V.JxW * D_quad, V.vals, V.vals)
        return scatter_matrix(V, V, local)

    def diagnose_q(self, Z: Field, D: Field) -> Field:
        """Potential vorticity from <gamma, qD> = <gamma, Z>."""
        Dq = D.values()
        self.check_positive(Dq)
        A = self.weighted_mass(Dq)
        try:
            q = Factorization(A, spd_hint=True).solve(self.M0 @ Z.coefficients)
        except SolverError as exc:
            raise PositivityError(f"D-weighted mass matrix is not definite: {exc}") from exc
        return Field(self.V0, q)

    def vorticity_rhs(self, u: Field, boundary: bool = True) -> np.ndarray:
        """-<perp-grad gamma, u> (+ <<gamma, n^perp.u>>) + <gamma, f> over all of V0."""
        rhs = -(self.C @ u.coefficients) + self.f_vec
        if boundary:
            rhs += self.T @ u.coefficients
        return rhs

    def init_Z(self, u: Field) -> Field:
        """Mass-weighted vorticity consistent with u, boundary integral included."""
        return Field(self.V0, self.M0_solver.solve(self.vorticity_rhs(u)))

    def diagnose_ring_vorticity(self, u: Field) -> Field:
        """The V̊0 vorticity: <gamma, Z_ring> + <perp-grad gamma, u> - <gamma, f> = 0 on V̊0."""
        free = self.V0r.free
        A = self.M0[free][:, free]
        rhs = (-(self.C @ u.coefficients) + self.f_vec)[free]
        return Field(self.V0r, Factorization(A, spd_hint=True).solve(rhs))

    def consistency_residual(self, u: Field, Z: Field) -> np.ndarray:
        """<gamma, Z> + <perp-grad gamma, u> - <<gamma, n^perp.u>> - <gamma, f> for every gamma in V0."""
        return self.M0 @ Z.coefficients - self.vorticity_rhs(u)

    def vorticity_for(self, state: State) -> Field:
        """The Z used by the scheme: carried for prognostic_Z, rediagnosed from u otherwise."""
        if self.scheme == "prognostic_Z":
            return state.Z
        return self.init_Z(state.u)

    def diagnostics(self, state: State) -> Diagnostics:
        Z = self.vorticity_for(state)
        return Diagnostics(F=self.diagnose_F(state.u, state.D), q=self.diagnose_q(Z, state.D))

    # -- invariants --------------------------------------------------------------
    def energy(self, u: Field, D: Field) -> float:
        uq = u.values()
        Dq = D.values()
        return self.integrate(0.5 * Dq * np.sum(uq * uq, axis=-1) + 0.5 * self.g * Dq * Dq)

    def conserved(self, state: State) -> ConservedSet:
        Z = self.vorticity_for(state)
        q = self.diagnose_q(Z, state.D)
        return ConservedSet(
            H=self.energy(state.u, state.D),
            Q=self.integrate(Z.values()),
            Zens=float(q.coefficients @ (self.M0 @ Z.coefficients)),
            M=self.integrate(state.D.values()),
        )

    # -- semi-discrete dynamics ----------------------------------------------------
    def bernoulli(self, u: Field, D: Field) -> np.ndarray:
        uq = u.values()
        return 0.5 * np.sum(uq * uq, axis=-1) + self.g * D.values()

    def semidiscrete_tendencies(self, state: State, diag: Optional[Diagnostics] = None):
        """Galerkin time derivatives (u_t, D_t, Z_t) as coefficient vectors."""
        if diag is None:
            diag = self.diagnostics(state)
        F, q = diag.F, diag.q
        Fq = F.values()
        qq = q.values()
        rhs_u = (-self.V1.test_integral(qq[..., None] * perp(Fq))
                 + self.V1.test_integral(self.bernoulli(state.u, state.D), "div"))
        u_t = self.M1_solver.solve(rhs_u)
        D_t = self.M2_solver.solve(-(self.B @ F.coefficients))
        if self.scheme == "naive":
            ut = Field(self.V1, u_t)
            rhs_z = -(self.C @ ut.coefficients) + self.T @ ut.coefficients
        else:
            rhs_z = self.V0.test_integral(qq[..., None] * Fq, "grad")
        Z_t = self.M0_solver.solve(rhs_z)
        return u_t, D_t, Z_t

    # -- construction of states ------------------------------------------------------
    def state_from_functions(self, u_func: Callable, D_func: Callable, t: float = 0.0) -> State:
        """Project closed-form u and D, then initialise Z from u."""
        u = project(u_func, self.V1)
        D = project(D_func, self.V2)
        self.check_positive(D.values())
        return State(u, D, self.init_Z(u), t, self.scheme)

    def random_state(self, rng: np.random.Generator, D0: float = 1.0,
                     u_scale: float = 1.0, random_Z: bool = True) -> State:
        """Coefficients i.i.d. uniform in [-1, 1]; D = D0 + 0.5*D0*(uniform), so min D >= 0.5*D0."""
        u = Field(self.V1, u_scale * rng.uniform(-1, 1, self.V1.dim))
        d = rng.uniform(-1, 1, self.V2.dim)
        D = Field(self.V2, D0 + 0.5 * D0 * d)
        if random_Z and self.scheme == "prognostic_Z":
            Z = Field(self.V0, rng.uniform(-1, 1, self.V0.dim))
        else:
            Z = self.init_Z(u)
        return State(u, D, Z, 0.0, self.scheme)
