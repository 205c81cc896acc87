"""Run configuration: YAML in, validated dataclasses out.

A minimal file needs only ``scenario``, ``refinement``, ``dt`` and ``t_end``::

    scenario: kelvin_disk
    refinement: 2
    dt: 0.02
    t_end: 1

Nested sections (``newton``, ``supg``, ``physics``, ``mesh``, ``output``)
are optional.  Unknown keys anywhere are rejected.
"""
from __future__ import annotations

import dataclasses
import logging
from pathlib import Path
from typing import Any, Optional

import yaml

from ..swe import SCHEMES
from ..timestepping import NewtonConfig, StepConfig, SUPGConfig

log = logging.getLogger(__name__)

SCENARIOS = ("kelvin_disk", "channel_jet", "disk_solid_rotation", "torus_vortex_pair",
             "custom_expression")


class ConfigError(ValueError):
    """Invalid or unparsable configuration."""


@dataclasses.dataclass
class NewtonSection:
    abs_tol: float = 1e-13
    rel_tol: float = 1e-12
    max_iters: int = 20
    jacobian: str = "analytic"


@dataclasses.dataclass
class SUPGSection:
    enabled: bool = False
    tau: Optional[float] = None


@dataclasses.dataclass
class PhysicsSection:
    """Gravity and f = f0 + beta*y; None picks the scenario's default."""

    g: Optional[float] = None
    f0: Optional[float] = None
    beta: float = 0.0


@dataclasses.dataclass
class MeshSection:
    kind: Optional[str] = None  # disk, channel, torus; None picks the scenario's default
    Lx: float = 1.0
    Ly: float = 1.0


@dataclasses.dataclass
class OutputSection:
    csv_path: Optional[str] = None
    vtk_every: int = 0
    vtk_dir: Optional[str] = None


@dataclasses.dataclass
class Config:
    scenario: str
    refinement: int
    dt: float
    t_end: float
    degree: int = 2
    scheme: str = "prognostic_Z"
    integrator: str = "poisson"
    picard_iters: int = 4
    H_ref: Optional[float] = None
    quadrature_degree: Optional[int] = None
    seed: int = 0
    newton: NewtonSection = dataclasses.field(default_factory=NewtonSection)
    supg: SUPGSection = dataclasses.field(default_factory=SUPGSection)
    physics: PhysicsSection = dataclasses.field(default_factory=PhysicsSection)
    mesh: MeshSection = dataclasses.field(default_factory=MeshSection)
    output: OutputSection = dataclasses.field(default_factory=OutputSection)
    scenario_params: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        _check(self.scenario in SCENARIOS, f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        _check(self.scheme in SCHEMES, f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        _check(self.degree in (2, 3), f"degree must be 2 or 3, got {self.degree}")
        _check(self.refinement >= 0, "refinement must be >= 0")
        _check(self.dt > 0, "dt must be positive")
        _check(self.t_end >= 0, "t_end must be >= 0")
        _check(self.integrator in ("poisson", "picard"), f"unknown integrator {self.integrator!r}")
        _check(self.newton.jacobian in ("analytic", "finite_difference", "fd"),
               f"unknown jacobian {self.newton.jacobian!r}")
        _check(self.supg.tau is None or self.supg.tau >= 0, "supg.tau must be >= 0")
        _check(self.mesh.kind in (None, "disk", "channel", "torus"), f"unknown mesh kind {self.mesh.kind!r}")
        _check(self.output.vtk_every >= 0, "output.vtk_every must be >= 0")

    @property
    def n_steps(self) -> int:
        n = self.t_end / self.dt
        return int(round(n)) if abs(n - round(n)) < 1e-9 * max(1.0, n) else int(n) + 1

    def step_config(self) -> StepConfig:
        return StepConfig(
            dt=self.dt,
            integrator=self.integrator,
            newton=NewtonConfig(self.newton.abs_tol, self.newton.rel_tol, self.newton.max_iters,
                                self.newton.jacobian),
            picard_iters=self.picard_iters,
            supg=SUPGConfig(self.supg.enabled, self.supg.tau),
            H_ref=self.H_ref,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


_SECTIONS = {"newton": NewtonSection, "supg": SUPGSection, "physics": PhysicsSection,
             "mesh": MeshSection, "output": OutputSection}


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(names)}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS and cls is Config:
            kwargs[key] = _build(_SECTIONS[key], value or {}, f"{where}.{key}")
        else:
            kwargs[key] = _coerce(names[key], value, f"{where}.{key}")
    missing = [f.name for f in names.values()
               if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
               and f.name not in kwargs]
    if missing:
        raise ConfigError(f"{where}: missing required key(s) {missing}")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _coerce(field: dataclasses.Field, value, where: str):
    kind = str(field.type)
    if value is None:
        if "Optional" in kind:
            return None
        raise ConfigError(f"{where}: value required")
    try:
        if "float" in kind:
            return float(value)
        if "int" in kind and not isinstance(value, bool):
            if float(value) != int(value):
                raise ValueError("not an integer")
            return int(value)
        if "bool" in kind:
            if not isinstance(value, bool):
                raise ValueError("not a boolean")
            return value
        if "str" in kind:
            return str(value)
        if "dict" in kind:
            if not isinstance(value, dict):
                raise ValueError("not a mapping")
            return dict(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: bad value {value!r} ({exc})") from exc
    return value


def config_from_dict(data: dict) -> Config:
    return _build(Config, data, "config")


def load_config(path) -> Config:
    """Parse and validate a YAML config file; defaults are filled and logged."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}: YAML parse error{loc}: {exc}") from exc
    cfg = config_from_dict(data if data is not None else {})
    log.info("configuration %s: %s", path, cfg.to_dict())
    return cfg


def save_config(cfg: Config, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
