"""Time stepping for the perforated problem and for its homogenized limit.

Both integrators are semi-implicit backward Euler: diffusion, absorption and
the (boundary) mass terms are implicit, the reactions ``f`` and ``g`` are
lagged and vertex-lumped, so every step is a single SPD solve.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .cell import HomogenizedCoefficients
from .fem import (
    DOMAIN,
    HOLE_BOUNDARY,
    assemble_boundary_mass,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    lumped_measure,
    solve_spd,
)
from .geometry import PerforatedDomain, Rectangle
from .mesh import HOLE, OUTER, DofMap, TriMesh, build_dofmap, dump_mesh, triangulate_perforated, triangulate_rectangle
from .nonlinear import Nonlinearity

log = logging.getLogger(__name__)

BLOWUP_FACTOR = 1e6

SpaceTimeFn = Callable[[np.ndarray, float], np.ndarray]
SpaceFn = Callable[[np.ndarray], np.ndarray]


class BlowUpError(RuntimeError):
    """The combined norm left the configured guard band."""


def _zero_st(x, t):
    return np.zeros(len(x))


def _zero_s(x):
    return np.zeros(len(x))


@dataclass
class ProblemData:
    nonlin: Nonlinearity
    kappa: float = 1.0
    h: SpaceTimeFn = _zero_st
    rho: SpaceTimeFn = _zero_st
    u0: SpaceFn = _zero_s
    psi0: SpaceFn | None = None
    T_final: float = 0.25

    def validate(self, outer: Rectangle | None = None, tol: float = 1e-12) -> None:
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.T_final < 0:
            raise ValueError("T_final must be non-negative")
        outer = outer or Rectangle()
        s = np.linspace(0.0, 1.0, 33)
        pts = np.vstack([
            np.column_stack([outer.x0 + (outer.x1 - outer.x0) * s, np.full_like(s, outer.y0)]),
            np.column_stack([outer.x0 + (outer.x1 - outer.x0) * s, np.full_like(s, outer.y1)]),
            np.column_stack([np.full_like(s, outer.x0), outer.y0 + (outer.y1 - outer.y0) * s]),
            np.column_stack([np.full_like(s, outer.x1), outer.y0 + (outer.y1 - outer.y0) * s]),
        ])
        if np.max(np.abs(self.u0(pts))) > tol:
            raise ValueError("u0 must vanish on the outer boundary")
        for t in np.linspace(0.0, max(self.T_final, 0.0), 5):
            if np.max(np.abs(self.rho(pts, float(t)))) > tol:
                raise ValueError("rho must vanish on the outer boundary")


@dataclass
class Trajectory:
    mesh: TriMesh
    dofmap: DofMap
    times: list[float] = field(default_factory=list)
    snapshots: list[np.ndarray] = field(default_factory=list)
    l2_norm: list[float] = field(default_factory=list)
    boundary_l2_norm: list[float] = field(default_factory=list)
    h1_seminorm: list[float] = field(default_factory=list)
    energy_residual: list[float] = field(default_factory=list)
    dt_h1_norm: list[float] = field(default_factory=list)
    """H1 norm of the difference quotient ``(u^{n+1} - u^n)/dt``; 0 at t0."""

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]

    def h1_norm(self) -> np.ndarray:
        return np.sqrt(np.square(self.h1_seminorm) + np.square(self.l2_norm))

    def l2_time_h1(self) -> float:
        """Discrete ``||u||_{L2(0,T;H1)}`` (right-endpoint rule)."""
        if len(self.times) < 2:
            return 0.0
        dt = np.diff(self.times)
        return float(np.sqrt(np.sum(dt * self.h1_norm()[1:] ** 2)))

    def sup_h1(self) -> float:
        return float(np.max(self.h1_norm()))

    def l2_time_h1_of_derivative(self) -> float:
        if len(self.times) < 2:
            return 0.0
        dt = np.diff(self.times)
        return float(np.sqrt(np.sum(dt * np.square(self.dt_h1_norm[1:]))))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "l2_norm", "boundary_l2_norm", "h1_seminorm", "energy_residual"])
            for row in zip(self.times, self.l2_norm, self.boundary_l2_norm, self.h1_seminorm, self.energy_residual):
                w.writerow([repr(float(v)) for v in row])

    def dump_snapshot(self, path: str | Path, index: int = -1) -> None:
        dump_mesh(self.mesh, path, self.dofmap.scatter(self.snapshots[index]))


# --------------------------------------------------------------------------
# perforated problem


@dataclass
class EpsilonOperators:
    mesh: TriMesh
    dofmap: DofMap
    epsilon: float
    M: sp.csr_matrix
    B: sp.csr_matrix
    """Hole-boundary mass already weighted by ``epsilon``."""
    A: sp.csr_matrix
    lumped_domain: np.ndarray
    lumped_hole: np.ndarray
    """Unweighted lumped hole-boundary measure per dof."""

    @classmethod
    def build(cls, mesh: TriMesh, epsilon: float) -> "EpsilonOperators":
        dm = build_dofmap(mesh, OUTER)
        return cls(
            mesh,
            dm,
            epsilon,
            assemble_mass(mesh, dm),
            assemble_boundary_mass(mesh, dm, HOLE, epsilon),
            assemble_stiffness(mesh, dm),
            lumped_measure(mesh, dm, DOMAIN),
            lumped_measure(mesh, dm, HOLE_BOUNDARY),
        )

    @property
    def hole_dofs(self) -> np.ndarray:
        return np.flatnonzero(self.lumped_hole > 0)

    def loads(self, data: ProblemData, t: float) -> np.ndarray:
        """``load_h + eps * load_rho`` at time ``t``."""
        x = self.mesh.vertices
        out = assemble_load(self.mesh, self.dofmap, data.h(x, t), DOMAIN)
        if len(self.mesh.tagged_edges(HOLE)):
            out += assemble_load(self.mesh, self.dofmap, data.rho(x, t), HOLE_BOUNDARY, self.epsilon)
        return out

    def reactions(self, data: ProblemData, u: np.ndarray) -> np.ndarray:
        """``N_f(u) + eps * N_g(u)`` with lumped quadrature."""
        out = data.nonlin.f(u) * self.lumped_domain
        if self.epsilon and np.any(self.lumped_hole):
            out = out + self.epsilon * data.nonlin.g(u) * self.lumped_hole
        return out

    def combined_norm(self, u: np.ndarray) -> float:
        return math.sqrt(max(float(u @ (self.M @ u) + u @ (self.B @ u)), 0.0))


def initial_state(ops: EpsilonOperators, data: ProblemData) -> np.ndarray:
    u = ops.dofmap.gather(data.u0(ops.mesh.vertices))
    if data.psi0 is not None:
        hv = ops.mesh.tagged_vertices(HOLE)
        d = ops.dofmap.vertex_to_dof[hv]
        u[d[d >= 0]] = data.psi0(ops.mesh.vertices[hv[d >= 0]])
    return u


def _fixed_point_solve(lhs, rhs_lin, dt, react, u_lag, cg_tol, iters):
    u = solve_spd(lhs, rhs_lin - dt * react(u_lag), cg_tol, x0=u_lag)
    for _ in range(iters):
        u = solve_spd(lhs, rhs_lin - dt * react(u), cg_tol, x0=u)
    return u


def step_epsilon(
    u: np.ndarray,
    data: ProblemData,
    t_new: float,
    dt: float,
    ops: EpsilonOperators,
    lhs: sp.spmatrix | None = None,
    cg_tol: float = 1e-10,
    fixed_point_iters: int = 0,
    guard: float | None = None,
) -> np.ndarray:
    """One step of ``(M + B + dt(A + kappa M)) u' = (M + B) u + dt(loads - N(u))``."""
    MB = ops.M + ops.B
    if lhs is None:
        lhs = (MB + dt * (ops.A + data.kappa * ops.M)).tocsr()
    rhs_lin = MB @ u + dt * ops.loads(data, t_new)
    react = lambda v: ops.reactions(data, v)  # noqa: E731
    new = _fixed_point_solve(lhs, rhs_lin, dt, react, u, cg_tol, fixed_point_iters)
    if not np.all(np.isfinite(new)):
        raise BlowUpError(f"non-finite state at t={t_new:g}")
    if guard is not None and ops.combined_norm(new) > guard:
        raise BlowUpError(f"combined norm {ops.combined_norm(new):.3e} exceeds guard {guard:.3e} at t={t_new:g}")
    return new


def energy_residual(u_old: np.ndarray, u_new: np.ndarray, data: ProblemData, dt: float, ops: EpsilonOperators, t_new: float) -> float:
    """Discrete defect of the energy balance between two consecutive states."""
    MB = ops.M + ops.B
    dE = 0.5 * (u_new @ (MB @ u_new) - u_old @ (MB @ u_old)) / dt
    diss = u_new @ (ops.A @ u_new) + data.kappa * (u_new @ (ops.M @ u_new))
    react = ops.reactions(data, u_new) @ u_new
    work = ops.loads(data, t_new) @ u_new
    return float(abs(dE + diss + react - work))


def _time_grid(T: float, dt: float) -> np.ndarray:
    if T == 0:
        return np.array([0.0])
    n = max(1, int(math.ceil(T / dt - 1e-9)))
    return np.linspace(0.0, T, n + 1)


def _record(traj: Trajectory, t, u, M, B, A, res, dq):
    traj.times.append(float(t))
    traj.l2_norm.append(math.sqrt(max(float(u @ (M @ u)), 0.0)))
    traj.boundary_l2_norm.append(math.sqrt(max(float(u @ (B @ u)), 0.0)) if B is not None else 0.0)
    traj.h1_seminorm.append(math.sqrt(max(float(u @ (A @ u)), 0.0)))
    traj.energy_residual.append(float(res))
    traj.dt_h1_norm.append(dq)


def _dq_norm(du: np.ndarray, M, A) -> float:
    return math.sqrt(max(float(du @ (M @ du) + du @ (A @ du)), 0.0))


def run_epsilon(
    domain: PerforatedDomain,
    data: ProblemData,
    h_target: float,
    dt: float,
    cg_tol: float = 1e-10,
    fixed_point_iters: int = 0,
    keep: str = "all",
    mesh: TriMesh | None = None,
) -> Trajectory:
    """Integrate the perforated problem on ``[0, T]`` with per-step diagnostics."""
    if mesh is None:
        mesh = triangulate_perforated(domain, h_target)
    ops = EpsilonOperators.build(mesh, domain.epsilon)
    return run_with_operators(ops, data, dt, cg_tol, fixed_point_iters, keep)


def run_with_operators(ops: EpsilonOperators, data: ProblemData, dt: float, cg_tol: float = 1e-10, fixed_point_iters: int = 0, keep: str = "all") -> Trajectory:
    times = _time_grid(data.T_final, dt)
    u = initial_state(ops, data)
    traj = Trajectory(ops.mesh, ops.dofmap)
    traj.snapshots.append(u)
    _record(traj, 0.0, u, ops.M, ops.B, ops.A, 0.0, 0.0)
    guard = BLOWUP_FACTOR * max(ops.combined_norm(u), 1.0)
    if len(times) > 1:
        step = times[1] - times[0]
        lhs = (ops.M + ops.B + step * (ops.A + data.kappa * ops.M)).tocsr()
    for t_new in times[1:]:
        new = step_epsilon(u, data, t_new, step, ops, lhs, cg_tol, fixed_point_iters, guard)
        res = energy_residual(u, new, data, step, ops, t_new)
        _record(traj, t_new, new, ops.M, ops.B, ops.A, res, _dq_norm((new - u) / step, ops.M, ops.A))
        if keep == "all":
            traj.snapshots.append(new)
        else:
            traj.snapshots[-1] = new
        u = new
    return traj


# --------------------------------------------------------------------------
# homogenized problem


@dataclass
class HomogenizedOperators:
    mesh: TriMesh
    dofmap: DofMap
    coeffs: HomogenizedCoefficients
    M: sp.csr_matrix
    AQ: sp.csr_matrix
    lumped: np.ndarray

    @classmethod
    def build(cls, mesh: TriMesh, coeffs: HomogenizedCoefficients) -> "HomogenizedOperators":
        dm = build_dofmap(mesh, OUTER)
        return cls(mesh, dm, coeffs, assemble_mass(mesh, dm), assemble_stiffness(mesh, dm, coeffs.Q), lumped_measure(mesh, dm, DOMAIN))

    def loads(self, data: ProblemData, t: float) -> np.ndarray:
        """``theta* load_h + sigma load_rho``."""
        x = self.mesh.vertices
        c = self.coeffs
        w = c.theta_star * data.h(x, t)
        if c.sigma:
            w = w + c.sigma * data.rho(x, t)
        return assemble_load(self.mesh, self.dofmap, w, DOMAIN)

    def reactions(self, data: ProblemData, u: np.ndarray) -> np.ndarray:
        c = self.coeffs
        out = c.theta_star * data.nonlin.f(u)
        if c.sigma:
            out = out + c.sigma * data.nonlin.g(u)
        return out * self.lumped

    def lhs(self, data: ProblemData, dt: float) -> sp.csr_matrix:
        c = self.coeffs
        return ((c.theta_star + c.sigma) * self.M + dt * (self.AQ + data.kappa * c.theta_star * self.M)).tocsr()


def step_homogenized(
    u: np.ndarray,
    data: ProblemData,
    t_new: float,
    dt: float,
    ops: HomogenizedOperators,
    lhs: sp.spmatrix | None = None,
    cg_tol: float = 1e-10,
    fixed_point_iters: int = 0,
    guard: float | None = None,
) -> np.ndarray:
    """Backward Euler step of the limit equation with weights ``theta*`` and ``sigma``."""
    c = ops.coeffs
    if lhs is None:
        lhs = ops.lhs(data, dt)
    rhs_lin = (c.theta_star + c.sigma) * (ops.M @ u) + dt * ops.loads(data, t_new)
    react = lambda v: ops.reactions(data, v)  # noqa: E731
    new = _fixed_point_solve(lhs, rhs_lin, dt, react, u, cg_tol, fixed_point_iters)
    if not np.all(np.isfinite(new)):
        raise BlowUpError(f"non-finite state at t={t_new:g}")
    if guard is not None:
        nrm = math.sqrt((c.theta_star + c.sigma) * float(new @ (ops.M @ new)))
        if nrm > guard:
            raise BlowUpError(f"norm {nrm:.3e} exceeds guard {guard:.3e} at t={t_new:g}")
    return new


def homogenized_energy_residual(u_old, u_new, data: ProblemData, dt: float, ops: HomogenizedOperators, t_new: float) -> float:
    c = ops.coeffs
    w = c.theta_star + c.sigma
    dE = 0.5 * w * (u_new @ (ops.M @ u_new) - u_old @ (ops.M @ u_old)) / dt
    diss = u_new @ (ops.AQ @ u_new) + data.kappa * c.theta_star * (u_new @ (ops.M @ u_new))
    react = ops.reactions(data, u_new) @ u_new
    work = ops.loads(data, t_new) @ u_new
    return float(abs(dE + diss + react - work))


def run_homogenized(
    data: ProblemData,
    coeffs: HomogenizedCoefficients,
    h_target: float,
    dt: float,
    outer: Rectangle | None = None,
    cg_tol: float = 1e-10,
    fixed_point_iters: int = 0,
    keep: str = "all",
    mesh: TriMesh | None = None,
) -> Trajectory:
    """Integrate the homogenized problem on the unperforated rectangle."""
    outer = outer or Rectangle()
    if mesh is None:
        mesh = triangulate_rectangle(outer, h_target)
    ops = HomogenizedOperators.build(mesh, coeffs)
    times = _time_grid(data.T_final, dt)
    u = ops.dofmap.gather(data.u0(mesh.vertices))
    traj = Trajectory(mesh, ops.dofmap)
    traj.snapshots.append(u)
    sM = coeffs.sigma * ops.M
    _record(traj, 0.0, u, ops.M, sM, ops.AQ, 0.0, 0.0)
    w = coeffs.theta_star + coeffs.sigma
    guard = BLOWUP_FACTOR * max(math.sqrt(w * float(u @ (ops.M @ u))), 1.0)
    if len(times) > 1:
        step = times[1] - times[0]
        lhs = ops.lhs(data, step)
    for t_new in times[1:]:
        new = step_homogenized(u, data, t_new, step, ops, lhs, cg_tol, fixed_point_iters, guard)
        res = homogenized_energy_residual(u, new, data, step, ops, t_new)
        _record(traj, t_new, new, ops.M, sM, ops.AQ, res, _dq_norm((new - u) / step, ops.M, ops.AQ))
        if keep == "all":
            traj.snapshots.append(new)
        else:
            traj.snapshots[-1] = new
        u = new
    return traj
