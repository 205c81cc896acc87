"""Initial conditions and their meshes.

kelvin_disk          boundary-trapped Kelvin wave on the unit disk
channel_jet          geostrophically balanced zonal jet in an x-periodic channel (steady)
disk_solid_rotation  gradient-wind balanced solid-body rotation on the unit disk (steady)
torus_vortex_pair    two Gaussian vortices on the doubly periodic unit square
custom_expression    u, v, D given as numpy expressions in x, y
"""
from __future__ import annotations

import dataclasses
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from ..assembly import Factorization
from ..fem.spaces import Field, project, scatter_matrix
from ..mesh import Mesh, build_disk, build_periodic_rectangle
from ..swe import Physics, ShallowWaterModel, State
from .config import Config


class ScenarioError(ValueError):
    """Scenario and mesh or parameters do not fit together."""


@dataclasses.dataclass
class Scenario:
    name: str
    mesh_kind: str
    u: Optional[Callable]
    D: Callable
    steady: bool
    params: dict
    # u is None when the state is built by a custom routine (streamfunction)
    build: Optional[Callable] = None

    def reference(self):
        """Exact (u, D) callables for steady scenarios, else None."""
        return (self.u, self.D) if self.steady else None


_DEFAULT_PHYSICS = {
    "kelvin_disk": dict(g=1.0, f0=10.0),
    "channel_jet": dict(g=1.0, f0=1.0),
    "disk_solid_rotation": dict(g=1.0, f0=1.0),
    "torus_vortex_pair": dict(g=1.0, f0=0.0),
    "custom_expression": dict(g=1.0, f0=0.0),
}

_MESH_KIND = {"kelvin_disk": "disk", "channel_jet": "channel", "disk_solid_rotation": "disk",
              "torus_vortex_pair": "torus"}

_PARAMS = {
    "kelvin_disk": dict(a0=0.01, H=1.0),
    "channel_jet": dict(D0=2.0, U0=1.0),
    "disk_solid_rotation": dict(omega0=0.0, D0=1.0),
    "torus_vortex_pair": dict(amplitude=5.0, sigma=0.08, separation=0.2, D0=1.0),
    "custom_expression": dict(mesh="torus", u="0*x", v="0*x", D="1+0*x"),
}


def physics_for(cfg: Config) -> Physics:
    base = _DEFAULT_PHYSICS[cfg.scenario]
    g = base["g"] if cfg.physics.g is None else cfg.physics.g
    f0 = base["f0"] if cfg.physics.f0 is None else cfg.physics.f0
    return Physics(g=g, f0=f0, beta=cfg.physics.beta)


def scenario_params(name: str, overrides: dict) -> dict:
    params = dict(_PARAMS[name])
    unknown = sorted(set(overrides) - set(params))
    if unknown:
        raise ScenarioError(f"scenario {name}: unknown parameter(s) {unknown}; allowed {sorted(params)}")
    params.update(overrides)
    return params


def mesh_kind_for(cfg: Config) -> str:
    if cfg.scenario == "custom_expression":
        default = scenario_params(cfg.scenario, cfg.scenario_params)["mesh"]
    else:
        default = _MESH_KIND[cfg.scenario]
    kind = cfg.mesh.kind or default
    required = _MESH_KIND.get(cfg.scenario)
    if required is not None and kind != required:
        raise ScenarioError(f"scenario {cfg.scenario} needs a {required} mesh, got {kind}")
    return kind


def build_mesh(kind: str, refinement: int, Lx: float = 1.0, Ly: float = 1.0) -> Mesh:
    """Disk level ``refinement`` or a rectangle with ``refinement`` cells per side."""
    if kind == "disk":
        return build_disk(refinement)
    if refinement < 1:
        raise ScenarioError("rectangle meshes need at least 1 cell per side")
    if kind == "channel":
        return build_periodic_rectangle(refinement, refinement, Lx, Ly, True, False)
    if kind == "torus":
        return build_periodic_rectangle(refinement, refinement, Lx, Ly, True, True)
    raise ScenarioError(f"unknown mesh kind {kind!r}")


# -- closed-form fields --------------------------------------------------------------
def kelvin(physics: Physics, a0: float = 0.01, H: float = 1.0) -> Scenario:
    f = physics.f0

    def amp(x, y):
        r = np.hypot(x, y)
        return a0 * np.exp((r - 1.0) * f) * y

    def D(x, y):
        return H + amp(x, y)

    def u(x, y):
        r = np.maximum(np.hypot(x, y), 1e-300)
        a = amp(x, y)
        return np.stack([-y / r * a, x / r * a], axis=-1)

    return Scenario("kelvin_disk", "disk", u, D, False, dict(a0=a0, H=H))


def channel_jet(physics: Physics, D0: float = 2.0, U0: float = 1.0) -> Scenario:
    """U = U0 sin(pi y) balanced by g D' = -f0 U, exact for constant f."""
    if physics.beta != 0.0:
        raise ScenarioError("channel_jet is a steady state only for constant f (beta = 0)")
    c = physics.f0 * U0 / physics.g

    def u(x, y):
        return np.stack([U0 * np.sin(np.pi * y), 0.0 * x], axis=-1)

    def D(x, y):
        return D0 + c * (np.cos(np.pi * y) - 1.0) / np.pi + 0.0 * x

    return Scenario("channel_jet", "channel", u, D, True, dict(D0=D0, U0=U0))


def disk_solid_rotation(physics: Physics, omega0: float = 0.0, D0: float = 1.0) -> Scenario:
    """u = omega0 (-y, x) with radial balance g D' = (omega0^2 + omega0 f0) r."""
    if physics.beta != 0.0:
        raise ScenarioError("disk_solid_rotation is a steady state only for constant f")
    k = (omega0 ** 2 + omega0 * physics.f0) / (2.0 * physics.g)

    def u(x, y):
        return np.stack([-omega0 * y, omega0 * x], axis=-1)

    def D(x, y):
        return D0 + k * (x * x + y * y)

    return Scenario("disk_solid_rotation", "disk", u, D, True, dict(omega0=omega0, D0=D0))


def _periodic_gaussian(x, y, cx, cy, sigma, Lx, Ly):
    out = 0.0 * x
    for i in (-1, 0, 1):
        for j in (-1, 0, 1):
            out = out + np.exp(-((x - cx - i * Lx) ** 2 + (y - cy - j * Ly) ** 2) / (2 * sigma ** 2))
    return out


def torus_vortex_pair(physics: Physics, amplitude=5.0, sigma=0.08, separation=0.2, D0=1.0,
                      Lx=1.0, Ly=1.0) -> Scenario:
    """Two like-signed Gaussian vortices; u = perp-grad psi with Laplacian(psi) = vorticity."""
    cx, cy = 0.5 * Lx, 0.5 * Ly

    def vort(x, y):
        return amplitude * (_periodic_gaussian(x, y, cx - separation / 2, cy, sigma, Lx, Ly)
                            + _periodic_gaussian(x, y, cx + separation / 2, cy, sigma, Lx, Ly))

    def D(x, y):
        return D0 + 0.0 * x

    params = dict(amplitude=amplitude, sigma=sigma, separation=separation, D0=D0)

    def build(model: ShallowWaterModel) -> State:
        u = streamfunction_velocity(model, vort)
        Dh = project(D, model.V2)
        return State(u, Dh, model.init_Z(u), 0.0, model.scheme)

    return Scenario("torus_vortex_pair", "torus", None, D, False, params, build)


def streamfunction_velocity(model: ShallowWaterModel, vorticity: Callable) -> Field:
    """Solve Laplacian(psi) = omega - mean(omega) in V0 (mean-free psi), return perp-grad psi in V1.

    perp-grad maps V0 into V1 exactly, so the projection is exact.
    """
    V0 = model.V0
    if model.mesh.has_boundary:
        raise ScenarioError("streamfunction initialisation is implemented for periodic meshes only")
    w = np.asarray(vorticity(V0.qpoints[..., 0], V0.qpoints[..., 1]), dtype=float)
    w = w - model.integrate(w) / model.mesh.area
    K = scatter_matrix(V0, V0, np.einsum("cq,cqid,cqjd->cij", V0.JxW, V0.grads, V0.grads))
    m = V0.test_integral(np.ones_like(w))
    A = sp.bmat([[K, m[:, None]], [m[None, :], None]], format="csc")
    rhs = np.concatenate([-V0.test_integral(w), [0.0]])
    psi = Factorization(A).solve(rhs)[:-1]
    g = V0.gradients(psi)
    return _project_values(model, np.stack([-g[..., 1], g[..., 0]], axis=-1))


def _project_values(model: ShallowWaterModel, vals: np.ndarray) -> Field:
    return Field(model.V1, model.M1_solver.solve(model.V1.test_integral(vals)))


_SAFE = {name: getattr(np, name) for name in
         ("sin", "cos", "tan", "exp", "log", "sqrt", "arctan2", "hypot", "tanh", "cosh", "sinh",
          "abs", "pi", "minimum", "maximum", "where")}


def _expression(src: str) -> Callable:
    code = compile(str(src), "<expression>", "eval")
    for name in code.co_names:
        if name not in _SAFE and name not in ("x", "y"):
            raise ScenarioError(f"expression {src!r}: name {name!r} is not allowed")

    def func(x, y):
        return np.broadcast_to(eval(code, {"__builtins__": {}}, dict(_SAFE, x=x, y=y)), np.shape(x))

    return func


def custom_expression(physics: Physics, mesh="torus", u="0*x", v="0*x", D="1+0*x") -> Scenario:
    fu, fv, fD = _expression(u), _expression(v), _expression(D)

    def uvec(x, y):
        return np.stack([fu(x, y), fv(x, y)], axis=-1)

    return Scenario("custom_expression", mesh, uvec, fD, False, dict(mesh=mesh, u=u, v=v, D=D))


def make_scenario(cfg: Config, physics: Physics) -> Scenario:
    params = scenario_params(cfg.scenario, cfg.scenario_params)
    if cfg.scenario == "kelvin_disk":
        return kelvin(physics, **params)
    if cfg.scenario == "channel_jet":
        return channel_jet(physics, **params)
    if cfg.scenario == "disk_solid_rotation":
        return disk_solid_rotation(physics, **params)
    if cfg.scenario == "torus_vortex_pair":
        return torus_vortex_pair(physics, Lx=cfg.mesh.Lx, Ly=cfg.mesh.Ly, **params)
    return custom_expression(physics, **params)


def initial_state(scenario: Scenario, model: ShallowWaterModel) -> State:
    """Project u and D, initialise Z from u (boundary term included)."""
    expected = scenario.mesh_kind
    actual = "disk" if model.mesh.has_boundary and model.mesh.periodic == (None, None) else (
        "channel" if model.mesh.has_boundary else "torus")
    if expected != actual:
        raise ScenarioError(f"scenario {scenario.name} needs a {expected} mesh, got {actual}")
    if scenario.build is not None:
        state = scenario.build(model)
    else:
        state = model.state_from_functions(scenario.u, scenario.D)
    model.check_positive(state.D.values())
    return state


@dataclasses.dataclass
class Setup:
    config: Config
    mesh: Mesh
    model: ShallowWaterModel
    scenario: Scenario
    state: State


def setup(cfg: Config, refinement: Optional[int] = None) -> Setup:
    """Mesh, model and initial state for a configuration."""
    physics = physics_for(cfg)
    kind = mesh_kind_for(cfg)
    level = cfg.refinement if refinement is None else refinement
    mesh = build_mesh(kind, level, cfg.mesh.Lx, cfg.mesh.Ly)
    if cfg.scheme == "no_boundary" and mesh.has_boundary:
        raise ScenarioError(f"scheme no_boundary cannot run on a {kind} mesh")
    model = ShallowWaterModel(mesh, cfg.degree, cfg.scheme, physics, cfg.quadrature_degree)
    scenario = make_scenario(cfg, physics)
    return Setup(cfg, mesh, model, scenario, initial_state(scenario, model))
