"""Declarative run configuration (TOML) and the forcing/initial-datum presets."""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .geometry import GeometryError, HoleSpec, Rectangle, epsilon_from_string, make_unit_cell, tile_counts
from .nonlinear import AssumptionError, Nonlinearity, reaction
from .parabolic import ProblemData

STUDY_KINDS = ("cell", "epsilon_run", "homogenized_run", "convergence", "properties")
COMMAND_KIND = {"cell": "cell", "run-eps": "epsilon_run", "run-hom": "homogenized_run", "converge": "convergence", "props": "properties"}


class ConfigError(ValueError):
    pass


def _bump(x):
    return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])


# space-time presets, all scaled by an amplitude; every one except "constant" vanishes on the unit square boundary
SPACE_TIME_PRESETS = {
    "zero": lambda x, t: np.zeros(len(x)),
    "constant": lambda x, t: np.ones(len(x)),
    "bump": lambda x, t: _bump(x),
    "bump_ramp": lambda x, t: t * _bump(x),
    "bump_decay": lambda x, t: np.exp(-t) * _bump(x),
}
SPACE_PRESETS = {
    "zero": lambda x: np.zeros(len(x)),
    "bump": _bump,
}


@dataclass
class GeometryConfig:
    shape: str = "disc"
    """``disc``, ``square``, ``ellipse`` or ``none`` for an unperforated cell."""
    size: float | tuple[float, float] = 0.25
    polygon_segments: int = 32
    domain: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)
    epsilon_list: tuple[float, ...] = (0.25, 0.125, 0.0625)

    def hole(self) -> HoleSpec | None:
        if self.shape == "none":
            return None
        return HoleSpec(self.shape, self.size, (0.5, 0.5), self.polygon_segments)

    def outer(self) -> Rectangle:
        return Rectangle(*self.domain)


@dataclass
class DiscretizationConfig:
    h_cell: float = 1.0 / 64
    """Mesh size for the cell problem."""
    h_ratio: float = 8.0
    """Perforated meshes use ``h = min(eps / h_ratio, h_max)``."""
    h_max: float = 1.0 / 64
    h_hom: float = 1.0 / 128
    dt_factor: float = 0.5
    """``dt = dt_factor * h`` with ``h`` the finest mesh of the study."""
    cg_tol: float = 1e-10
    fixed_point_iters: int = 0

    def h_eps(self, eps: float) -> float:
        return min(eps / self.h_ratio, self.h_max)


@dataclass
class ProblemConfig:
    f: str = "cubic"
    f_exponent: float | None = None
    g: str = "linear"
    g_exponent: float | None = None
    kappa: float = 1.0
    forcing: str = "bump"
    forcing_amplitude: float = 10.0
    boundary_forcing: str = "bump"
    boundary_amplitude: float = 1.0
    initial: str = "zero"
    initial_amplitude: float = 1.0
    T_final: float = 0.25


@dataclass
class StudyConfig:
    kind: str = "convergence"
    epsilon: float | None = None
    """Single ``eps`` for ``epsilon_run``; defaults to the first of the list."""
    trace_samples: int = 20
    seed: int = 0


@dataclass
class OutputConfig:
    dir: str = "out"


@dataclass
class RunConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    discretization: DiscretizationConfig = field(default_factory=DiscretizationConfig)
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    study: StudyConfig = field(default_factory=StudyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    # ---------------------------------------------------------------- builders

    def cell(self):
        return make_unit_cell(self.geometry.hole())

    def nonlinearity(self) -> Nonlinearity:
        p = self.problem
        return Nonlinearity(reaction(p.f, p.f_exponent), reaction(p.g, p.g_exponent))

    def problem_data(self) -> ProblemData:
        p = self.problem
        hf, rf, u0 = SPACE_TIME_PRESETS[p.forcing], SPACE_TIME_PRESETS[p.boundary_forcing], SPACE_PRESETS[p.initial]
        a, b, c = p.forcing_amplitude, p.boundary_amplitude, p.initial_amplitude
        return ProblemData(
            nonlin=self.nonlinearity(),
            kappa=p.kappa,
            h=lambda x, t: a * hf(x, t),
            rho=lambda x, t: b * rf(x, t),
            u0=lambda x: c * u0(x),
            T_final=p.T_final,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["geometry"]["domain"] = list(self.geometry.domain)
        d["geometry"]["epsilon_list"] = list(self.geometry.epsilon_list)
        return d

    # -------------------------------------------------------------- validation

    def validate(self) -> "RunConfig":
        g, dz, p, s = self.geometry, self.discretization, self.problem, self.study
        if s.kind not in STUDY_KINDS:
            raise ConfigError(f"study.kind must be one of {STUDY_KINDS}, got {s.kind!r}")
        eps = list(g.epsilon_list)
        if not eps or any(e <= 0 for e in eps):
            raise ConfigError("geometry.epsilon_list must hold positive values")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("geometry.epsilon_list must be strictly decreasing")
        try:
            outer = g.outer()
            if outer.x1 <= outer.x0 or outer.y1 <= outer.y0:
                raise ConfigError("geometry.domain must be (x0, y0, x1, y1) with x1 > x0, y1 > y0")
            for e in eps + ([s.epsilon] if s.epsilon is not None else []):
                tile_counts(outer, e)
            hole = g.hole()
            if hole is not None:
                hole.validate()
        except GeometryError as exc:
            raise ConfigError(str(exc)) from exc
        for name in ("h_cell", "h_ratio", "h_max", "h_hom", "dt_factor", "cg_tol"):
            if not getattr(dz, name) > 0:
                raise ConfigError(f"discretization.{name} must be positive")
        if dz.fixed_point_iters < 0:
            raise ConfigError("discretization.fixed_point_iters must be >= 0")
        for label, name in (("forcing", p.forcing), ("boundary_forcing", p.boundary_forcing)):
            if name not in SPACE_TIME_PRESETS:
                raise ConfigError(f"problem.{label}: unknown preset {name!r}; known: {', '.join(SPACE_TIME_PRESETS)}")
        if p.initial not in SPACE_PRESETS:
            raise ConfigError(f"problem.initial: unknown preset {p.initial!r}; known: {', '.join(SPACE_PRESETS)}")
        if p.boundary_forcing == "constant" and p.boundary_amplitude != 0:
            raise ConfigError("problem.boundary_forcing must vanish on the outer boundary")
        try:
            nl = self.nonlinearity()
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from exc
        if nl.f.admissible and nl.g.admissible:
            try:
                nl.validate()
            except AssumptionError as exc:
                raise ConfigError(str(exc)) from exc
        if p.kappa <= 0 or p.T_final < 0:
            raise ConfigError("problem.kappa must be positive and problem.T_final non-negative")
        try:
            self.problem_data().validate(outer)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self


_SECTIONS = {
    "geometry": GeometryConfig,
    "discretization": DiscretizationConfig,
    "problem": ProblemConfig,
    "study": StudyConfig,
    "output": OutputConfig,
}
_EPS_KEYS = {"epsilon_list", "epsilon", "h_cell", "h_max", "h_hom"}


def _coerce(key, value):
    """Allow fractions such as ``"1/8"`` wherever a length is expected."""
    try:
        if key == "epsilon_list":
            return tuple(epsilon_from_string(v) for v in value)
        if key == "size" and isinstance(value, list):
            return tuple(float(v) for v in value)
        if key == "domain":
            return tuple(float(v) for v in value)
        if key in _EPS_KEYS and isinstance(value, str):
            return epsilon_from_string(value)
    except (ValueError, ZeroDivisionError, TypeError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return value


def from_dict(raw: dict) -> RunConfig:
    cfg = RunConfig()
    for section, body in raw.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        known = {f.name for f in fields(_SECTIONS[section])}
        for key in body:
            if key not in known:
                raise ConfigError(f"unknown key {section}.{key}")
        values = {k: _coerce(k, v) for k, v in body.items()}
        setattr(cfg, section, replace(getattr(cfg, section), **values))
    return cfg.validate()


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(raw)
