"""Energy-enstrophy conserving implicit midpoint (Poisson) integrator and a Picard variant.

One step solves for (u1, D1, F, q1) with

  R_u = <w, u1-u0> + dt <w, q* F^perp> - dt <div w, g(D0+D1)/2 + K>
  R_D = <phi, D1-D0> + dt <phi, div F>
  R_F = <v, F - Fbar>
  R_q = <gamma, q1 D1> - <gamma, Z0> - dt <grad gamma, q* F>

where K = (|u0|^2 + u0.u1 + |u1|^2)/6 and Fbar is the exact time average of
uD along the linear path between the two states.  q* is the averaged PV
(q0+q1)/2, optionally with an upwind (SUPG) correction.  For the naive scheme
R_q is replaced by the diagnostic relation for q1 from u1.
"""
from __future__ import annotations

import dataclasses
import logging
import time
from typing import Callable, Iterable, Optional

import numpy as np
import scipy.sparse as sp

from .assembly import Factorization, SolverError, perp
from .fem.spaces import Field, FunctionSpace, scatter_matrix
from .swe import ConservedSet, PositivityError, ShallowWaterModel, State

log = logging.getLogger(__name__)


class NewtonDivergence(RuntimeError):
    """Nonlinear iteration failed to reach tolerance."""

    def __init__(self, message: str, history):
        super().__init__(message)
        self.history = list(history)


class StepFailure(RuntimeError):
    """A step inside ``run`` failed; ``step`` is the 1-based index of the failed step."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step} failed: {cause}")
        self.step = step
        self.cause = cause


@dataclasses.dataclass
class NewtonConfig:
    abs_tol: float = 1e-13
    rel_tol: float = 1e-12
    max_iters: int = 20
    jacobian: str = "analytic"  # or "finite_difference"
    fd_eps: float = 1e-7

    def __post_init__(self):
        if self.jacobian == "fd":
            self.jacobian = "finite_difference"
        if self.jacobian not in ("analytic", "finite_difference"):
            raise ValueError(f"unknown jacobian kind {self.jacobian!r}")
        if not (self.abs_tol > 0 and self.rel_tol > 0 and self.max_iters >= 1):
            raise ValueError("Newton tolerances must be positive and max_iters >= 1")


@dataclasses.dataclass
class SUPGConfig:
    enabled: bool = False
    tau: Optional[float] = None  # None means tau = dt


@dataclasses.dataclass
class StepConfig:
    dt: float
    integrator: str = "poisson"  # or "picard"
    newton: NewtonConfig = dataclasses.field(default_factory=NewtonConfig)
    picard_iters: int = 4
    supg: SUPGConfig = dataclasses.field(default_factory=SUPGConfig)
    H_ref: Optional[float] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.integrator not in ("poisson", "picard"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.picard_iters < 1:
            raise ValueError("picard_iters must be at least 1")
        if self.supg.tau is not None and self.supg.tau < 0:
            raise ValueError(f"SUPG tau must be >= 0, got {self.supg.tau}")

    @property
    def tau(self) -> float:
        if not self.supg.enabled:
            return 0.0
        return self.dt if self.supg.tau is None else float(self.supg.tau)


@dataclasses.dataclass
class StepResult:
    state: State
    iterations: int
    residual_norms: list
    wall_time: float
    converged: bool = True


@dataclasses.dataclass
class RunResult:
    state: State
    times: list
    conserved: list
    steps: list


# -- averaged variational derivatives ---------------------------------------------------
def _average_flux_values(u0, u1, D0, D1):
    D0 = np.asarray(D0)[..., None]
    D1 = np.asarray(D1)[..., None]
    return (u1 * D1 + u0 * D0) / 3.0 + (u0 * D1 + u1 * D0) / 6.0


def _average_kinetic_values(u0, u1):
    return (np.sum(u0 * u0, -1) + np.sum(u0 * u1, -1) + np.sum(u1 * u1, -1)) / 6.0


def average_flux(u_n, u_np1, D_n, D_np1):
    """Time average of uD along the straight path between two states.

    The weights are u1D1/3 + u0D1/6 + u1D0/6 + u0D0/3.  Given Fields the
    result is its L2 projection into the velocity space; given quadrature
    arrays the pointwise average is returned.
    """
    if isinstance(u_n, Field):
        V1 = u_n.space
        g = _average_flux_values(u_n.values(), u_np1.values(), D_n.values(), D_np1.values())
        M = V1.mass_matrix()
        return Field(V1, Factorization(M, spd_hint=True).solve(V1.test_integral(g)))
    return _average_flux_values(u_n, u_np1, D_n, D_np1)


def average_kinetic(u_n, u_np1, D_n=None, D_np1=None, g: float = 1.0):
    """Time-averaged derivative of the energy with respect to D, at quadrature points.

    The kinetic part is (|u0|^2 + u0.u1 + |u1|^2)/6; g(D0+D1)/2 is added
    when depths are supplied.  Fields or quadrature arrays are accepted.
    """
    val = (lambda a: a.values() if isinstance(a, Field) else np.asarray(a))
    out = _average_kinetic_values(val(u_n), val(u_np1))
    if D_n is not None:
        out = out + 0.5 * g * (val(D_n) + val(D_np1))
    return out


def _q_star_values(q0, q1, D0, D1, F, gq0, gq1, dt, tau):
    qbar = 0.5 * (q0 + q1)
    if tau == 0.0:
        return qbar
    Dbar = 0.5 * (D0 + D1)
    adv = np.sum(F * 0.5 * (gq0 + gq1), -1) / Dbar
    return qbar - tau * ((q1 - q0) / dt + adv)


def supg_q_star(q_n: Field, q_np1: Field, D_n: Field, D_np1: Field, F_half: Field,
                cfg: StepConfig) -> np.ndarray:
    """Upwinded PV at quadrature points; equals (q_n + q_np1)/2 when tau is 0."""
    V0 = q_n.space
    return _q_star_values(q_n.values(), q_np1.values(), D_n.values(), D_np1.values(),
                          F_half.values(), V0.gradients(q_n.coefficients),
                          V0.gradients(q_np1.coefficients), cfg.dt, cfg.tau)


def _block(test: FunctionSpace, test_arr, trial: FunctionSpace, trial_arr, weight):
    """Sparse <test_i, weight trial_j> from tabulated arrays (vector or scalar)."""
    w = test.JxW * weight
    if test_arr.ndim == 4:
        local = np.einsum("cq,cqid,cqjd->cij", w, test_arr, trial_arr)
    else:
        local = np.einsum("cq,cqi,cqj->cij", w, test_arr, trial_arr)
    return scatter_matrix(test, trial, local)


class _StepSystem:
    """Residual and Jacobian of one implicit step, unknowns x = (u1, D1, F, q1)."""

    def __init__(self, model: ShallowWaterModel, state: State, cfg: StepConfig):
        self.m = model
        self.cfg = cfg
        self.dt = cfg.dt
        self.tau = cfg.tau
        V0, V1, V2 = model.V0, model.V1, model.V2
        self.sizes = [V1.dim, V2.dim, V1.dim, V0.dim]
        off = np.concatenate([[0], np.cumsum(self.sizes)])
        self.slices = [slice(off[i], off[i + 1]) for i in range(4)]
        self.n = int(off[-1])
        self.u0 = state.u.coefficients
        self.D0 = state.D.coefficients
        self.Z0 = model.vorticity_for(state)
        self.q0 = model.diagnose_q(self.Z0, state.D).coefficients
        self.u0q = state.u.values()
        self.D0q = state.D.values()
        self.q0q = V0.values(self.q0)
        self.gq0 = V0.gradients(self.q0)
        self.M0Z0 = model.M0 @ self.Z0.coefficients
        self.naive = model.scheme == "naive"

    def split(self, x):
        return [x[s] for s in self.slices]

    def initial_guess(self, state: State) -> np.ndarray:
        F0 = self.m.diagnose_F(state.u, state.D).coefficients
        return np.concatenate([self.u0, self.D0, F0, self.q0])

    def _fields(self, x):
        m = self.m
        u1, D1, F, q1 = self.split(x)
        fv = dict(u1q=m.V1.values(u1), D1q=m.V2.values(D1), Fq=m.V1.values(F),
                  q1q=m.V0.values(q1), gq1=m.V0.gradients(q1))
        fv["qs"] = _q_star_values(self.q0q, fv["q1q"], self.D0q, fv["D1q"], fv["Fq"],
                                  self.gq0, fv["gq1"], self.dt, self.tau)
        return fv

    def q_star(self, x) -> np.ndarray:
        return self._fields(x)["qs"]

    def residual(self, x) -> np.ndarray:
        m, dt = self.m, self.dt
        V0, V1, V2 = m.V0, m.V1, m.V2
        u1, D1, F, q1 = self.split(x)
        fv = self._fields(x)
        u1q, D1q, Fq, q1q, qs = fv["u1q"], fv["D1q"], fv["Fq"], fv["q1q"], fv["qs"]
        bern = average_kinetic(self.u0q, u1q, self.D0q, D1q, m.g)
        R_u = (m.M1 @ (u1 - self.u0) + dt * V1.test_integral(qs[..., None] * perp(Fq))
               - dt * V1.test_integral(bern, "div"))
        R_D = m.M2 @ (D1 - self.D0) + dt * (m.B @ F)
        R_F = m.M1 @ F - V1.test_integral(_average_flux_values(self.u0q, u1q, self.D0q, D1q))
        if self.naive:
            R_q = V0.test_integral(q1q * D1q) - m.vorticity_rhs(Field(V1, u1))
        else:
            R_q = (V0.test_integral(q1q * D1q) - self.M0Z0
                   - dt * V0.test_integral(qs[..., None] * Fq, "grad"))
        return np.concatenate([R_u, R_D, R_F, R_q])

    # derivative tables of q* with respect to each unknown, at quadrature points
    def _dqs(self, fv):
        m, dt, tau = self.m, self.dt, self.tau
        V0, V1, V2 = m.V0, m.V1, m.V2
        dq = 0.5 * V0.vals  # d qs / d q1_j
        if tau == 0.0:
            return dq, None, None
        Dbar = 0.5 * (self.D0q + fv["D1q"])
        gbar = 0.5 * (self.gq0 + fv["gq1"])
        Fq = fv["Fq"]
        dq = dq - tau * (V0.vals / dt
                         + 0.5 * np.einsum("cqd,cqjd->cqj", Fq, V0.grads) / Dbar[..., None])
        adv = np.sum(Fq * gbar, -1)
        dD = (tau * adv / Dbar ** 2 * 0.5)[..., None] * V2.vals
        dF = -tau * np.einsum("cqjd,cqd->cqj", V1.vals, gbar) / Dbar[..., None]
        return dq, dD, dF

    def jacobian_qq(self, x) -> sp.csr_matrix:
        """d R_q / d q1 alone (R_q is affine in q1)."""
        m = self.m
        fv = self._fields(x)
        if self.naive:
            return m.weighted_mass(fv["D1q"])
        dq, _, _ = self._dqs(fv)
        gam_F = np.einsum("cqid,cqd->cqi", m.V0.grads, fv["Fq"])
        return m.weighted_mass(fv["D1q"]) - self.dt * _block(m.V0, gam_F, m.V0, dq, np.ones_like(fv["D1q"]))

    def jacobian(self, x) -> sp.csr_matrix:
        m, dt = self.m, self.dt
        V0, V1, V2 = m.V0, m.V1, m.V2
        g = m.g
        fv = self._fields(x)
        u1q, D1q, Fq, q1q, qs = fv["u1q"], fv["D1q"], fv["Fq"], fv["q1q"], fv["qs"]
        dq, dD, dF = self._dqs(fv)
        one = np.ones_like(D1q)
        # test arrays contracted against fixed vectors
        w_Fperp = np.einsum("cqid,cqd->cqi", V1.vals, perp(Fq))
        gam_F = np.einsum("cqid,cqd->cqi", V0.grads, Fq)
        w_perp = perp(V1.vals)

        J_uu = m.M1 - dt * _block(V1, V1.divs, V1,
                                  np.einsum("cqjd,cqd->cqj", V1.vals, self.u0q + 2 * u1q) / 6.0, one)
        J_uD = -0.5 * dt * g * m.B.T
        J_uF = dt * _block(V1, V1.vals, V1, w_perp, qs)
        J_uq = dt * _block(V1, w_Fperp, V0, dq, one)
        J_DD = m.M2
        J_DF = dt * m.B
        J_Fu = -_block(V1, V1.vals, V1, V1.vals, D1q / 3.0 + self.D0q / 6.0)
        J_FD = -_block(V1, np.einsum("cqid,cqd->cqi", V1.vals, u1q / 3.0 + self.u0q / 6.0),
                       V2, V2.vals, one)
        J_FF = m.M1
        J_qD = _block(V0, V0.vals, V2, V2.vals, q1q)
        if self.naive:
            J_qu = sp.csr_matrix(m.C - m.T)
            J_qF = None
            J_qq = m.weighted_mass(D1q)
        else:
            J_qu = None
            J_qq = m.weighted_mass(D1q) - dt * _block(V0, gam_F, V0, dq, one)
            J_qF = -dt * _block(V0, V0.grads, V1, V1.vals, qs)
            if dD is not None:
                J_qD = J_qD - dt * _block(V0, gam_F, V2, dD, one)
                J_qF = J_qF - dt * _block(V0, gam_F, V1, dF, one)
        if dD is not None:
            J_uD = J_uD + dt * _block(V1, w_Fperp, V2, dD, one)
            J_uF = J_uF + dt * _block(V1, w_Fperp, V1, dF, one)
        blocks = [[J_uu, J_uD, J_uF, J_uq],
                  [None, J_DD, J_DF, None],
                  [J_Fu, J_FD, J_FF, None],
                  [J_qu, J_qD, J_qF, J_qq]]
        return sp.bmat(blocks, format="csc")

    def fd_jacobian(self, x, eps: float = 1e-7) -> sp.csc_matrix:
        """Central-difference Jacobian, one column per unknown."""
        cols = []
        for j in range(self.n):
            h = eps * max(1.0, abs(x[j]))
            xp = x.copy()
            xm = x.copy()
            xp[j] += h
            xm[j] -= h
            cols.append((self.residual(xp) - self.residual(xm)) / (2 * h))
        return sp.csc_matrix(np.column_stack(cols))

    def finish(self, x, state: State, exact_update: bool = True) -> State:
        """New state; D and Z are written in flux form so mass and circulation close exactly."""
        m = self.m
        u1, D1, F, q1 = self.split(x)
        if exact_update:
            D1 = self.D0 - self.dt * m.M2_solver.solve(m.B @ F)
        uf = Field(m.V1, u1.copy())
        Df = Field(m.V2, D1.copy())
        if self.naive or m.scheme == "no_boundary":
            Z1 = m.init_Z(uf)
        else:
            qs = self.q_star(x)
            flux = m.V0.test_integral(qs[..., None] * m.V1.values(F), "grad")
            Z1 = Field(m.V0, self.Z0.coefficients + self.dt * m.M0_solver.solve(flux))
        return State(uf, Df, Z1, state.t + self.dt, state.scheme)


def _norm(r: np.ndarray) -> float:
    return float(np.max(np.abs(r))) if r.size else 0.0


def poisson_step(model: ShallowWaterModel, state: State, cfg: StepConfig) -> StepResult:
    """One implicit midpoint step solved by Newton's method."""
    t0 = time.perf_counter()
    sys = _StepSystem(model, state, cfg)
    x = sys.initial_guess(state)
    nc = cfg.newton
    history = []
    r0 = None
    converged = False
    iters = 0
    for it in range(nc.max_iters + 1):
        R = sys.residual(x)
        rn = _norm(R)
        history.append(rn)
        if not np.isfinite(rn):
            break
        if r0 is None:
            r0 = rn
        if rn <= nc.abs_tol or rn <= nc.rel_tol * r0:
            converged = True
            break
        if it == nc.max_iters:
            break
        J = sys.fd_jacobian(x, nc.fd_eps) if nc.jacobian == "finite_difference" else sys.jacobian(x)
        try:
            dx = _lu_solve(J, -R)
        except SolverError:
            break
        x = x + dx
        iters += 1
        # stagnation at round-off: the update no longer moves x
        if _norm(dx) <= 1e-15 * max(1.0, _norm(x)):
            history.append(_norm(sys.residual(x)))
            converged = True
            break
    if not converged:
        raise NewtonDivergence(
            f"Newton did not converge in {iters} iterations at t={state.t:.6g}: "
            f"residual history {['%.3e' % h for h in history]}", history)
    new = sys.finish(x, state)
    model.check_positive(new.D.values())
    log.debug("poisson step t=%.6g iters=%d residual=%.3e", new.t, iters, history[-1])
    return StepResult(new, iters, history, time.perf_counter() - t0, True)


def _lu_solve(J, b):
    return Factorization(J.tocsc()).solve(b)


def _picard_operator(model: ShallowWaterModel, dt: float, H: float) -> Factorization:
    key = (float(dt), float(H))
    fac = model._picard_cache.get(key)
    if fac is None:
        A = sp.bmat([[model.M1 + 0.5 * dt * model.coriolis_matrix(), -0.5 * dt * model.g * model.B.T],
                     [H * dt * model.B, model.M2]], format="csc")
        fac = Factorization(A)
        model._picard_cache[key] = fac
    return fac


def _reference_depth(model: ShallowWaterModel, state: State) -> float:
    return model.integrate(state.D.values()) / model.mesh.area


def picard_step(model: ShallowWaterModel, state: State, cfg: StepConfig) -> StepResult:
    """Fixed number of quasi-Newton iterations with a constant linearised operator.

    F and q1 are recomputed exactly at every iterate; only the (u, D) update
    uses the frozen rotating wave operator about rest with depth H_ref.
    """
    t0 = time.perf_counter()
    sys = _StepSystem(model, state, cfg)
    H = cfg.H_ref if cfg.H_ref is not None else _reference_depth(model, state)
    fac = _picard_operator(model, cfg.dt, H)
    x = sys.initial_guess(state)
    su, sD, sF, sq = sys.slices
    history = []
    for _ in range(cfg.picard_iters):
        x = _close_F_q(model, sys, x)
        R = sys.residual(x)
        history.append(_norm(R))
        rhs = -np.concatenate([R[su], R[sD]])
        d = fac.solve(rhs)
        x[su] += d[:sys.sizes[0]]
        x[sD] += d[sys.sizes[0]:]
    x = _close_F_q(model, sys, x)
    history.append(_norm(sys.residual(x)))
    model.check_positive(model.V2.values(x[sD]))
    new = sys.finish(x, state, exact_update=False)
    return StepResult(new, cfg.picard_iters, history, time.perf_counter() - t0, True)


def _close_F_q(model, sys: _StepSystem, x):
    """Solve R_F = 0 then R_q = 0 (affine in F and in q1 respectively)."""
    su, sD, sF, sq = sys.slices
    x = x.copy()
    R = sys.residual(x)
    x[sF] -= model.M1_solver.solve(R[sF])
    model.check_positive(model.V2.values(x[sD]))
    R = sys.residual(x)
    Jqq = sys.jacobian_qq(x)
    x[sq] -= _lu_solve(Jqq, R[sq])
    return x


def step(model: ShallowWaterModel, state: State, cfg: StepConfig) -> StepResult:
    if cfg.integrator == "picard":
        return picard_step(model, state, cfg)
    return poisson_step(model, state, cfg)


def enstrophy_increment(model: ShallowWaterModel, old: State, new: State) -> float:
    """Enstrophy change across one converged conservative step, free of cancellation.

    With D1 - D0 = -dt div F holding pointwise and gamma = (q0+q1)/2 in the PV
    equation, Zens(new) - Zens(old) = 1/4 * integral of (q1-q0)^2 (D1-D0).
    Valid for the Poisson step without SUPG.
    """
    q0 = model.diagnose_q(model.vorticity_for(old), old.D).values()
    q1 = model.diagnose_q(model.vorticity_for(new), new.D).values()
    return 0.25 * model.integrate((q1 - q0) ** 2 * (new.D.values() - old.D.values()))


Observer = Callable[[int, State, Optional[StepResult]], None]


def run(model: ShallowWaterModel, state: State, cfg: StepConfig, n_steps: int,
        observers: Iterable[Observer] = ()) -> RunResult:
    """Advance ``n_steps`` steps, recording the conserved set after each one."""
    observers = list(observers)
    times = [state.t]
    cons: list[ConservedSet] = [model.conserved(state)]
    steps = []
    for obs in observers:
        obs(0, state, None)
    for n in range(1, n_steps + 1):
        try:
            res = step(model, state, cfg)
        except (NewtonDivergence, PositivityError, SolverError) as exc:
            raise StepFailure(n, exc) from exc
        state = res.state
        steps.append(res)
        times.append(state.t)
        cons.append(model.conserved(state))
        for obs in observers:
            obs(n, state, res)
    return RunResult(state, times, cons, steps)
