"""Point location and L2 differences between P1 fields on different meshes."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriMesh

# degree-5 rule on the reference triangle (barycentric coordinates, weights sum to 1)
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
QUAD_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
QUAD_W = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


def barycentric(mesh: TriMesh, tri: np.ndarray, pts: np.ndarray) -> np.ndarray:
    p = mesh.vertices[mesh.triangles[tri]]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    r = pts - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    l1 = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
    l2 = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
    return np.column_stack([1 - l1 - l2, l1, l2])


class PointLocator:
    """Find the donor triangle and barycentric weights for arbitrary points."""

    def __init__(self, mesh: TriMesh, k: int = 12, tol: float = 1e-10):
        self.mesh = mesh
        self.k = min(k, len(mesh.triangles))
        self.tol = tol
        self.tree = cKDTree(mesh.vertices[mesh.triangles].mean(axis=1))

    def locate(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pts = np.asarray(pts, dtype=float)
        n = len(pts)
        tri = np.full(n, -1)
        bary = np.zeros((n, 3))
        best = np.full(n, -np.inf)
        _, cand = self.tree.query(pts, k=self.k)
        cand = cand.reshape(n, -1)
        for c in cand.T:
            b = barycentric(self.mesh, c, pts)
            score = b.min(axis=1)
            better = score > best
            tri[better], bary[better], best[better] = c[better], b[better], score[better]
        miss = np.flatnonzero(best < -self.tol)
        for i in miss:
            # exhaustive fallback; keeps the result exact for odd meshes
            b = barycentric(self.mesh, np.arange(len(self.mesh.triangles)), np.repeat(pts[i : i + 1], len(self.mesh.triangles), axis=0))
            j = int(np.argmax(b.min(axis=1)))
            if b[j].min() < -self.tol:
                raise ValueError(f"point {pts[i]} lies outside the donor mesh")
            tri[i], bary[i] = j, b[j]
        return tri, bary

    def evaluate(self, vertex_values: np.ndarray, pts: np.ndarray) -> np.ndarray:
        tri, bary = self.locate(pts)
        return np.einsum("na,na->n", np.asarray(vertex_values)[self.mesh.triangles[tri]], bary)


def quadrature_points(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    """Physical quadrature points (T*7, 2) and their weights (area included)."""
    p = mesh.vertices[mesh.triangles]
    pts = np.einsum("qa,tad->tqd", QUAD_BARY, p).reshape(-1, 2)
    w = np.abs(mesh.signed_areas())[:, None] * QUAD_W[None, :]
    return pts, w.ravel()


def l2_difference(mesh: TriMesh, vertex_values: np.ndarray, other) -> float:
    """``||u_h - other||_{L2}`` over ``mesh``; ``other`` is a callable of points."""
    pts, w = quadrature_points(mesh)
    uh = np.einsum("qa,ta->tq", QUAD_BARY, np.asarray(vertex_values)[mesh.triangles]).ravel()
    d = uh - other(pts)
    return float(np.sqrt(np.sum(w * d * d)))


def interpolation_matrix(locator: PointLocator, pts: np.ndarray):
    """Sparse operator mapping donor vertex values to values at ``pts``."""
    import scipy.sparse as sp

    tri, bary = locator.locate(pts)
    cols = locator.mesh.triangles[tri]
    rows = np.repeat(np.arange(len(pts))[:, None], 3, axis=1)
    return sp.csr_matrix((bary.ravel(), (rows.ravel(), cols.ravel())), shape=(len(pts), locator.mesh.n_vertices))


class L2Comparison:
    """Repeated ``||u_eps - u||_{L2(mesh)}`` with a fixed donor mesh for ``u``."""

    def __init__(self, mesh: TriMesh, donor: TriMesh):
        pts, self.weights = quadrature_points(mesh)
        self.mesh = mesh
        self.P = interpolation_matrix(PointLocator(donor), pts)

    def __call__(self, vertex_values: np.ndarray, donor_values: np.ndarray) -> float:
        uh = np.einsum("qa,ta->tq", QUAD_BARY, np.asarray(vertex_values)[self.mesh.triangles]).ravel()
        d = uh - self.P @ donor_values
        return float(np.sqrt(np.sum(self.weights * d * d)))
