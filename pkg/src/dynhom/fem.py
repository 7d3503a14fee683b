"""P1 finite element operators and a diagonally preconditioned CG solver."""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp

from .mesh import DofMap, MeshError, TriMesh

log = logging.getLogger(__name__)

_MAX_RESTARTS = 4

DOMAIN = "DOMAIN"
HOLE_BOUNDARY = "HOLE_BOUNDARY"


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


def _geometry(mesh: TriMesh):
    p = mesh.vertices[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(det <= 0):
        raise MeshError("degenerate or inverted triangle in assembly")
    return p, det


def shape_gradients(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    """Constant gradients of the three hat functions per triangle, shape (T, 3, 2), and areas."""
    p, det = _geometry(mesh)
    # grad phi_a = rot90(x_c - x_b) / det for (a, b, c) cyclic
    grads = np.empty((len(p), 3, 2))
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        e = p[:, c] - p[:, b]
        grads[:, a, 0] = -e[:, 1] / det
        grads[:, a, 1] = e[:, 0] / det
    return grads, 0.5 * det


def _scatter(rows_v, cols_v, vals, dofmap: DofMap) -> sp.csr_matrix:
    v2d = dofmap.vertex_to_dof
    r = v2d[rows_v.ravel()]
    c = v2d[cols_v.ravel()]
    keep = (r >= 0) & (c >= 0)
    n = dofmap.n_dofs
    A = sp.coo_matrix((vals.ravel()[keep], (r[keep], c[keep])), shape=(n, n)).tocsr()
    A.sum_duplicates()
    # exact symmetry regardless of summation order
    A = ((A + A.T) * 0.5).tocsr()
    A.sort_indices()
    return A


def assemble_stiffness(mesh: TriMesh, dofmap: DofMap, coeff: np.ndarray | None = None) -> sp.csr_matrix:
    """Galerkin matrix of ``int (coeff grad u) . grad v``; ``coeff`` defaults to the identity."""
    grads, area = shape_gradients(mesh)
    if coeff is None:
        Kg = grads
    else:
        Kg = grads @ np.asarray(coeff, dtype=float).T
    ke = np.einsum("tad,tbd->tab", Kg, grads) * area[:, None, None]
    t = mesh.triangles
    rows = np.repeat(t[:, :, None], 3, axis=2)
    cols = np.repeat(t[:, None, :], 3, axis=1)
    return _scatter(rows, cols, ke, dofmap)


_MASS_REF = (np.ones((3, 3)) + np.eye(3)) / 12.0


def assemble_mass(mesh: TriMesh, dofmap: DofMap) -> sp.csr_matrix:
    """Consistent mass matrix ``int u v``."""
    _, det = _geometry(mesh)
    area = 0.5 * det
    me = area[:, None, None] * _MASS_REF[None]
    t = mesh.triangles
    rows = np.repeat(t[:, :, None], 3, axis=2)
    cols = np.repeat(t[:, None, :], 3, axis=1)
    return _scatter(rows, cols, me, dofmap)


_EDGE_MASS = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0


def assemble_boundary_mass(mesh: TriMesh, dofmap: DofMap, tag: str = "HOLE", weight: float = 1.0) -> sp.csr_matrix:
    """``weight * int_{tagged edges} u v`` with exact edge-wise integration."""
    e = mesh.tagged_edges(tag)
    if len(e) == 0:
        return sp.csr_matrix((dofmap.n_dofs, dofmap.n_dofs))
    L = np.linalg.norm(mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]], axis=1)
    be = weight * L[:, None, None] * _EDGE_MASS[None]
    rows = np.repeat(e[:, :, None], 2, axis=2)
    cols = np.repeat(e[:, None, :], 2, axis=1)
    return _scatter(rows, cols, be, dofmap)


def _accumulate(idx_v: np.ndarray, vals: np.ndarray, dofmap: DofMap) -> np.ndarray:
    d = dofmap.vertex_to_dof[idx_v.ravel()]
    keep = d >= 0
    return np.bincount(d[keep], weights=vals.ravel()[keep], minlength=dofmap.n_dofs)


def lumped_measure(mesh: TriMesh, dofmap: DofMap, region: str = DOMAIN, tag: str = "HOLE") -> np.ndarray:
    """Row sums of the (unweighted) mass on ``region``: ``int phi_i`` per dof."""
    if region == DOMAIN:
        _, det = _geometry(mesh)
        vals = np.repeat((det / 6.0)[:, None], 3, axis=1)
        return _accumulate(mesh.triangles, vals, dofmap)
    if region == HOLE_BOUNDARY:
        e = mesh.tagged_edges(tag)
        L = np.linalg.norm(mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]], axis=1)
        return _accumulate(e, np.repeat((0.5 * L)[:, None], 2, axis=1), dofmap)
    raise ValueError(f"unknown region {region!r}")


def assemble_nonlinear(
    mesh: TriMesh,
    dofmap: DofMap,
    fn,
    state: np.ndarray,
    region: str = DOMAIN,
    weight: float = 1.0,
    measure: np.ndarray | None = None,
) -> np.ndarray:
    """Vertex-lumped ``weight * int fn(u_h) phi_i`` over ``region``.

    ``measure`` may pass a precomputed :func:`lumped_measure` for the region.
    """
    if measure is None:
        measure = lumped_measure(mesh, dofmap, region)
    return weight * np.asarray(fn(state), dtype=float) * measure


def assemble_load(
    mesh: TriMesh,
    dofmap: DofMap,
    vertex_values: np.ndarray,
    region: str = DOMAIN,
    weight: float = 1.0,
    tag: str = "HOLE",
) -> np.ndarray:
    """``weight * int I_h(w) phi_i`` for the P1 interpolant of nodal data ``w``.

    Unlike the square operators, constrained vertices contribute their values.
    """
    w = np.asarray(vertex_values, dtype=float)
    if region == DOMAIN:
        _, det = _geometry(mesh)
        t = mesh.triangles
        vals = (0.5 * det)[:, None] * (w[t] @ _MASS_REF.T)
        return weight * _accumulate(t, vals, dofmap)
    if region == HOLE_BOUNDARY:
        e = mesh.tagged_edges(tag)
        if len(e) == 0:
            return np.zeros(dofmap.n_dofs)
        L = np.linalg.norm(mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]], axis=1)
        vals = L[:, None] * (w[e] @ _EDGE_MASS.T)
        return weight * _accumulate(e, vals, dofmap)
    raise ValueError(f"unknown region {region!r}")


def solve_spd(
    A: sp.spmatrix,
    b: np.ndarray,
    rel_tol: float = 1e-10,
    max_iter: int | None = None,
    x0: np.ndarray | None = None,
    deflate_constant: bool = False,
) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients.

    With ``deflate_constant`` the constant vector is projected out of the
    right-hand side and of every search direction, which makes the solve well
    posed for a semidefinite operator whose kernel is the constants.
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    if deflate_constant:
        b = b - b.mean()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    if max_iter is None:
        max_iter = max(100, 10 * n)
    d = A.diagonal()
    if np.any(d <= 0):
        raise SolverError("operator has a non-positive diagonal", np.inf, 0)
    inv_d = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)

    def project(v):
        return v - v.mean() if deflate_constant else v

    it = 0
    # the recursive residual drifts from the true one; restart from the true residual
    for _restart in range(_MAX_RESTARTS):
        r = project(b - A @ x)
        res = np.linalg.norm(r) / bnorm
        if res <= rel_tol:
            break
        z = project(inv_d * r)
        p = z.copy()
        rz = r @ z
        while res > rel_tol:
            if it >= max_iter:
                raise SolverError("CG did not converge", res, it)
            Ap = A @ p
            pAp = p @ Ap
            if pAp <= 0:
                raise SolverError("operator is not positive definite", res, it)
            alpha = rz / pAp
            x += alpha * p
            r = project(r - alpha * Ap)
            z = project(inv_d * r)
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
            it += 1
            res = np.linalg.norm(r) / bnorm
    else:
        res = np.linalg.norm(project(b - A @ x)) / bnorm
        if res > rel_tol:
            raise SolverError("CG stagnated", res, it)
    log.debug("CG converged in %d iterations (residual %.2e)", it, res)
    return x
