"""Periodic cell problem for the correctors and the homogenized coefficients."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .fem import assemble_mass, assemble_stiffness, shape_gradients, solve_spd
from .geometry import GeometryError, UnitCell
from .mesh import HOLE, DofMap, PeriodicMesh, build_dofmap, triangulate_cell

CG_TOL = 1e-12


@dataclass
class CorrectorField:
    j: int
    """Coordinate index, 0-based (``y_1`` is ``j = 0``)."""
    values: np.ndarray
    dofmap: DofMap
    mesh: PeriodicMesh
    mean: float

    def vertex_values(self) -> np.ndarray:
        return self.dofmap.scatter(self.values)


@dataclass(frozen=True)
class HomogenizedCoefficients:
    Q: np.ndarray
    theta_star: float
    sigma: float

    def to_json(self) -> dict:
        return {
            "q": [[float(v) for v in row] for row in self.Q],
            "theta_star": float(self.theta_star),
            "sigma": float(self.sigma),
        }

    @classmethod
    def from_json(cls, data: dict | str) -> "HomogenizedCoefficients":
        if isinstance(data, str):
            data = json.loads(data)
        return cls(np.array(data["q"], dtype=float), float(data["theta_star"]), float(data["sigma"]))

    def check(self, tol: float = 1e-10) -> None:
        Q = self.Q
        if abs(Q[0, 1] - Q[1, 0]) > tol:
            raise ValueError("homogenized matrix is not symmetric")
        if np.any(np.linalg.eigvalsh(0.5 * (Q + Q.T)) <= 0):
            raise ValueError("homogenized matrix is not positive definite")
        if not 0 < self.theta_star <= 1 or self.sigma < 0:
            raise ValueError("volume fraction or surface density out of range")

    @classmethod
    def identity(cls) -> "HomogenizedCoefficients":
        return cls(np.eye(2), 1.0, 0.0)


def hole_normal_load(pmesh: PeriodicMesh, dofmap: DofMap, j: int) -> tuple[np.ndarray, float]:
    """``int_{dF} n_j v`` for every periodic test function, and ``int_{dF} n_j``.

    ``n`` is the outward normal of ``Y*`` on the hole, i.e. pointing into the hole.
    """
    mesh = pmesh.base
    e = mesh.tagged_edges(HOLE)
    if len(e) == 0:
        return np.zeros(dofmap.n_dofs), 0.0
    t = mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]]
    # hole edges keep Y* on their left, so the right-hand normal leaves Y*
    n_len = np.column_stack([t[:, 1], -t[:, 0]])  # normal scaled by edge length
    half = 0.5 * n_len[:, j]
    d = dofmap.vertex_to_dof[e]
    b = np.bincount(d.ravel(), weights=np.repeat(half[:, None], 2, axis=1).ravel(), minlength=dofmap.n_dofs)
    return b, float(n_len[:, j].sum())


def solve_cell_problem(pmesh: PeriodicMesh, j: int, dofmap: DofMap | None = None, stiffness=None, mass=None) -> CorrectorField:
    """Zero-mean periodic corrector ``eta_j`` with ``d(eta_j - y_j)/dn = 0`` on the hole."""
    mesh = pmesh.base
    if dofmap is None:
        dofmap = build_dofmap(mesh, None, pmesh.pairing)
    A = assemble_stiffness(mesh, dofmap) if stiffness is None else stiffness
    M = assemble_mass(mesh, dofmap) if mass is None else mass
    b, compat = hole_normal_load(pmesh, dofmap, j)
    perim = float(mesh.edge_lengths(HOLE).sum())
    if abs(compat) > 1e-10 * max(perim, 1.0):
        raise GeometryError(f"Neumann data incompatible: int n_j = {compat:.3e}")
    eta = solve_spd(A, b, rel_tol=CG_TOL, deflate_constant=True)
    ones = np.ones(dofmap.n_dofs)
    area = ones @ (M @ ones)
    eta -= (ones @ (M @ eta)) / area
    mean = float(ones @ (M @ eta))
    return CorrectorField(j, eta, dofmap, pmesh, mean)


def _corrector_gradients(corr: CorrectorField) -> tuple[np.ndarray, np.ndarray]:
    mesh = corr.mesh.base
    grads, area = shape_gradients(mesh)
    vals = corr.vertex_values()[mesh.triangles]
    return np.einsum("ta,tad->td", vals, grads), area


def homogenized_matrix(correctors: list[CorrectorField], cell: UnitCell) -> HomogenizedCoefficients:
    """``q_ij = theta* delta_ij - int_{Y*} d eta_j / d y_i`` with exact per-triangle integrals."""
    Q = cell.area_Ystar * np.eye(2)
    for corr in correctors:
        g, area = _corrector_gradients(corr)
        Q[:, corr.j] -= (g * area[:, None]).sum(axis=0)
    return HomogenizedCoefficients(Q, cell.area_Ystar, cell.perimeter_dF)


def energy_diagonal(correctors: list[CorrectorField]) -> np.ndarray:
    """``int_{Y*} |grad(y_j - eta_j)|^2`` for each corrector, an independent route to ``q_jj``."""
    out = []
    for corr in correctors:
        g, area = _corrector_gradients(corr)
        e = -g
        e[:, corr.j] += 1.0
        out.append(float(((e**2).sum(axis=1) * area).sum()))
    return np.array(out)


def compute_coefficients(cell: UnitCell, h_target: float, threads: int = 1) -> tuple[HomogenizedCoefficients, list[CorrectorField]]:
    """Mesh ``Y*``, solve both cell problems and assemble ``Q``, ``theta*`` and ``sigma``."""
    if not cell.has_hole:
        # zero Neumann data: the correctors vanish identically
        return HomogenizedCoefficients.identity(), []
    pmesh = triangulate_cell(cell, h_target)
    dofmap = build_dofmap(pmesh.base, None, pmesh.pairing)
    A = assemble_stiffness(pmesh.base, dofmap)
    M = assemble_mass(pmesh.base, dofmap)
    solve = lambda j: solve_cell_problem(pmesh, j, dofmap, A, M)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=2) as ex:
            correctors = list(ex.map(solve, (0, 1)))
    else:
        correctors = [solve(0), solve(1)]
    return homogenized_matrix(correctors, cell), correctors
