"""Triangular meshes of the perforated cell ``Y*`` and of ``Omega_eps``.

Every cell is meshed from one template: the cell side carries ``m`` uniform
segments, and a graded O-grid of quadrilateral rings connects the polygonal
hole to the cell perimeter.  Cells without holes use the structured ``m x m``
grid.  Because all cells share the perimeter lattice, an ``eps``-tiling is
assembled by gluing templates along lattice nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import PerforatedDomain, Rectangle, UnitCell, tile_counts

OUTER = "OUTER"
HOLE = "HOLE"
PERIODIC = "PERIODIC"
TAGS = (OUTER, HOLE, PERIODIC)

CONSTRAINED = -1

_MAX_TEMPLATE_TRIES = 64


class MeshError(RuntimeError):
    """Raised when a mesh cannot be generated or is degenerate."""


@dataclass
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    hole_id: np.ndarray | None = field(default=None, repr=False)
    """Per boundary edge: index of the hole it belongs to, -1 otherwise."""

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def area(self) -> float:
        return float(self.signed_areas().sum())

    def tagged_edges(self, tag: str) -> np.ndarray:
        return self.boundary_edges[self.boundary_tags == tag]

    def tagged_vertices(self, tag: str) -> np.ndarray:
        return np.unique(self.tagged_edges(tag))

    def edge_lengths(self, tag: str) -> np.ndarray:
        e = self.tagged_edges(tag)
        return np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)

    def all_edges(self) -> np.ndarray:
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def min_angle(self) -> float:
        """Smallest interior angle over all triangles, in degrees."""
        p = self.vertices[self.triangles]
        angles = []
        for a in range(3):
            u = p[:, (a + 1) % 3] - p[:, a]
            v = p[:, (a + 2) % 3] - p[:, a]
            c = np.einsum("ij,ij->i", u, v) / (
                np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
            )
            angles.append(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
        return float(np.min(angles))

    def max_edge(self) -> float:
        e = self.all_edges()
        return float(np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1).max())

    def check(self) -> None:
        """Validate orientation and that tags cover exactly the free edges."""
        if np.any(self.signed_areas() <= 0):
            raise MeshError("mesh contains non-positive triangles")
        free = _free_edges(self.triangles)
        mine = np.unique(np.sort(self.boundary_edges, axis=1), axis=0)
        if len(free) != len(mine) or np.any(free != mine):
            raise MeshError("boundary edges do not match the edges of single triangles")


@dataclass
class PeriodicMesh:
    base: TriMesh
    pairing: np.ndarray
    """Rows ``(slave, master)``: ``vertices[slave] - vertices[master]`` is (1,0) or (0,1)."""


@dataclass
class DofMap:
    vertex_to_dof: np.ndarray
    n_dofs: int

    @property
    def free(self) -> np.ndarray:
        return self.vertex_to_dof >= 0

    def scatter(self, values: np.ndarray) -> np.ndarray:
        """Dof vector to per-vertex values; constrained vertices get 0."""
        out = np.zeros(len(self.vertex_to_dof))
        out[self.free] = values[self.vertex_to_dof[self.free]]
        return out

    def gather(self, vertex_values: np.ndarray) -> np.ndarray:
        """Per-vertex values to a dof vector (first vertex of each dof wins)."""
        out = np.zeros(self.n_dofs)
        idx = np.flatnonzero(self.free)[::-1]
        out[self.vertex_to_dof[idx]] = vertex_values[idx]
        return out


def _free_edges(triangles: np.ndarray) -> np.ndarray:
    t = triangles
    e = np.sort(np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq[counts == 1]


# --------------------------------------------------------------------------
# cell templates


@dataclass
class _Template:
    xy: np.ndarray  # unit-cell coordinates
    triangles: np.ndarray
    lattice: np.ndarray  # (k, l) for perimeter/grid nodes, (-1, -1) for private nodes
    hole_edges: np.ndarray  # vertex pairs, oriented with Y* on the left


def _perimeter_lattice(m: int) -> np.ndarray:
    """Counterclockwise lattice indices around the cell, starting at (0, 0)."""
    k = np.arange(m)
    bottom = np.column_stack([k, np.zeros(m, int)])
    right = np.column_stack([np.full(m, m), k])
    top = np.column_stack([m - k, np.full(m, m)])
    left = np.column_stack([np.zeros(m, int), m - k])
    return np.vstack([bottom, right, top, left])


def _structured_template(m: int) -> _Template:
    k, l = np.meshgrid(np.arange(m + 1), np.arange(m + 1), indexing="ij")
    lattice = np.column_stack([k.ravel(), l.ravel()])
    xy = lattice / m
    idx = lambda a, b: a * (m + 1) + b  # noqa: E731
    tris = []
    for a in range(m):
        for b in range(m):
            v00, v10, v11, v01 = idx(a, b), idx(a + 1, b), idx(a + 1, b + 1), idx(a, b + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return _Template(xy, np.array(tris, dtype=np.int64), lattice, np.zeros((0, 2), np.int64))


def _hole_nodes(poly: np.ndarray, P: int) -> np.ndarray | None:
    """Place ``P`` nodes on the polygon at near-uniform arc length, every vertex among them.

    Vertex ``i`` goes to the node nearest its arc-length position; the nodes in
    between are spread uniformly along the polygon edge. Node ``k`` is later
    joined to perimeter node ``k``. Returns None if two vertices collide.
    """
    n = len(poly)
    if P < n:
        return None
    seg = np.linalg.norm(np.roll(poly, -1, axis=0) - poly, axis=1)
    S = np.concatenate([[0.0], np.cumsum(seg)[:-1]])
    rel = np.rint(P * S / seg.sum()).astype(np.int64)
    rel_next = np.append(rel[1:], P)
    if np.any(rel_next - rel <= 0):
        return None
    nodes = np.empty((P, 2))
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        cnt = rel_next[i] - rel[i]
        s = np.arange(cnt) / cnt
        nodes[rel[i] : rel_next[i]] = a + s[:, None] * (b - a)
    return nodes


def _grading(ell_h: float, ell_s: float, dist: float) -> np.ndarray:
    """Layer parameters 0 = phi_0 < ... < phi_L = 1 with near-square quads."""
    phi = [0.0]
    while phi[-1] < 1.0:
        f = phi[-1]
        phi.append(f + ((1.0 - f) * ell_h + f * ell_s) / dist)
        if len(phi) > 10_000:
            raise MeshError("layer grading did not terminate")
    phi = np.array(phi)
    if len(phi) > 2 and phi[-1] - 1.0 > 0.5 * (phi[-1] - phi[-2]):
        phi = phi[:-1]
    return phi / phi[-1]


def _hole_template(cell: UnitCell, m: int) -> _Template | None:
    poly = cell.polygon
    lattice_ring = _perimeter_lattice(m)
    outer = lattice_ring / m
    inner = _hole_nodes(poly, len(outer))
    if inner is None:
        return None
    P = len(outer)
    ell_h = float(np.mean(np.linalg.norm(np.roll(inner, -1, axis=0) - inner, axis=1)))
    dist = float(np.max(np.linalg.norm(outer - inner, axis=1)))
    phi = _grading(ell_h, 1.0 / m, dist)
    L = len(phi) - 1
    layers = inner[None, :, :] + phi[:, None, None] * (outer - inner)[None, :, :]
    layers[0] = inner
    layers[L] = outer
    xy = layers.reshape(-1, 2)
    vid = lambda j, k: j * P + (k % P)  # noqa: E731
    tris = []
    for j in range(L):
        for k in range(P):
            a, b, c, d = vid(j, k), vid(j, k + 1), vid(j + 1, k + 1), vid(j + 1, k)
            d_ac = np.linalg.norm(xy[a] - xy[c])
            d_bd = np.linalg.norm(xy[b] - xy[d])
            if d_ac <= d_bd * (1.0 + 1e-12):
                tris.append((a, c, b))
                tris.append((a, d, c))
            else:
                tris.append((a, d, b))
                tris.append((b, d, c))
    tris = np.array(tris, dtype=np.int64)
    lattice = np.full((len(xy), 2), -1, dtype=np.int64)
    lattice[L * P :] = lattice_ring
    # Y* lies outside the hole, so hole edges run clockwise around the hole
    k = np.arange(P)
    hole_edges = np.column_stack([(k + 1) % P, k])
    tmpl = _Template(xy, tris, lattice, hole_edges)
    if np.any(_signed_areas(xy, tris) <= 0):
        return None
    return tmpl


def _signed_areas(xy: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p = xy[tris]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def cell_resolution(h_target: float) -> int:
    """Perimeter segments per unit cell side for a target edge length ``h_target``."""
    return max(1, int(math.ceil(1.0 / h_target - 1e-9)))


def _template(cell: UnitCell, m: int) -> tuple[_Template, int]:
    if not cell.has_hole:
        return _structured_template(m), m
    m0 = max(m, int(math.ceil(len(cell.polygon) / 4)))
    for mm in range(m0, m0 + _MAX_TEMPLATE_TRIES):
        t = _hole_template(cell, mm)
        if t is not None:
            return t, mm
    raise MeshError("could not build a hole-conforming cell template")


# --------------------------------------------------------------------------
# public generators


def triangulate_cell(cell: UnitCell, h_target: float) -> PeriodicMesh:
    """Periodic mesh of ``Y*`` with HOLE edges on the polygon and PERIODIC faces."""
    if cell.has_hole:
        from .geometry import clearance

        if not 0 < h_target < clearance(cell.polygon):
            raise MeshError("h_target must be below the hole-to-cell clearance")
    elif h_target <= 0:
        raise MeshError("h_target must be positive")
    tmpl, m = _template(cell, cell_resolution(h_target))
    xy = tmpl.xy.copy()
    lat = tmpl.lattice
    on_lat = lat[:, 0] >= 0
    # lattice nodes get exact k/m coordinates so opposite faces mirror bit-exactly
    xy[on_lat] = lat[on_lat] / m
    free = _free_edges(tmpl.triangles)
    mid = 0.5 * (xy[free[:, 0]] + xy[free[:, 1]])
    on_face = (
        (np.abs(mid[:, 0]) < 1e-12)
        | (np.abs(mid[:, 0] - 1) < 1e-12)
        | (np.abs(mid[:, 1]) < 1e-12)
        | (np.abs(mid[:, 1] - 1) < 1e-12)
    )
    face_edges = free[on_face]
    edges = np.vstack([tmpl.hole_edges, face_edges]) if len(tmpl.hole_edges) else face_edges
    tags = np.array([HOLE] * len(tmpl.hole_edges) + [PERIODIC] * len(face_edges))
    hole_id = np.array([0] * len(tmpl.hole_edges) + [-1] * len(face_edges), dtype=np.int64)
    mesh = TriMesh(xy, tmpl.triangles, edges.astype(np.int64), tags, hole_id)
    mesh.check()

    key = {tuple(v): i for i, v in enumerate(lat) if v[0] >= 0}
    pairs = []
    for i, (k, l) in enumerate(lat):
        if k == m and (0, l) in key:
            pairs.append((i, key[(0, l)]))
        if l == m and (k, 0) in key:
            pairs.append((i, key[(k, 0)]))
    pairing = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    return PeriodicMesh(mesh, pairing)


def structured_square(n: int, outer: Rectangle | None = None) -> TriMesh:
    """Structured ``n x n``-cell mesh of a rectangle with OUTER tags on its boundary."""
    outer = outer or Rectangle()
    tmpl = _structured_template(n)
    sx = outer.x1 - outer.x0
    sy = outer.y1 - outer.y0
    xy = np.column_stack(
        [outer.x0 + sx * tmpl.lattice[:, 0] / n, outer.y0 + sy * tmpl.lattice[:, 1] / n]
    )
    edges = _free_edges(tmpl.triangles)
    mesh = TriMesh(
        xy,
        tmpl.triangles,
        edges,
        np.array([OUTER] * len(edges)),
        np.full(len(edges), -1, dtype=np.int64),
    )
    return mesh


def triangulate_perforated(domain: PerforatedDomain, h_target: float) -> TriMesh:
    """Conforming mesh of ``Omega_eps`` (OUTER on the rectangle, HOLE on every hole)."""
    eps = domain.epsilon
    if h_target > eps / 4 * (1 + 1e-12):
        raise MeshError("h_target must be <= epsilon/4 to resolve each hole")
    cell = domain.cell
    i0, i1, j0, j1 = tile_counts(domain.outer, eps)
    m = cell_resolution(h_target / eps)
    if cell.has_hole:
        holed, m = _template(cell, m)
    plain = _structured_template(m)
    if not cell.has_hole:
        holed = plain

    NJ = (j1 - j0) * m + 1
    n_lattice = ((i1 - i0) * m + 1) * NJ

    keys, coords, tris_all, hole_edges, hole_ids = [], [], [], [], []
    private_next = n_lattice
    hole_index = {k: n for n, k in enumerate(domain.holes)}
    for i in range(i0, i1):
        for j in range(j0, j1):
            t = holed if (i, j) in hole_index else plain
            lat = t.lattice
            on_lat = lat[:, 0] >= 0
            key = np.empty(len(t.xy), dtype=np.int64)
            gi = (i - i0) * m + lat[on_lat, 0]
            gj = (j - j0) * m + lat[on_lat, 1]
            key[on_lat] = gi * NJ + gj
            n_priv = int((~on_lat).sum())
            key[~on_lat] = private_next + np.arange(n_priv)
            private_next += n_priv
            xy = np.empty_like(t.xy)
            xy[on_lat, 0] = (i * m + lat[on_lat, 0]) * eps / m
            xy[on_lat, 1] = (j * m + lat[on_lat, 1]) * eps / m
            xy[~on_lat] = eps * (np.array([i, j], dtype=float) + t.xy[~on_lat])
            if t is holed and len(t.hole_edges):
                hole_edges.append(key[t.hole_edges])
                hole_ids.append(np.full(len(t.hole_edges), hole_index[(i, j)], dtype=np.int64))
            keys.append(key)
            coords.append(xy)
            tris_all.append(key[t.triangles])

    keys = np.concatenate(keys)
    coords = np.vstack(coords)
    uniq, first = np.unique(keys, return_index=True)
    xy = coords[first]
    remap = lambda a: np.searchsorted(uniq, a)  # noqa: E731
    triangles = remap(np.vstack(tris_all))
    free = _free_edges(triangles)
    if hole_edges:
        h_edges = remap(np.vstack(hole_edges))
        h_ids = np.concatenate(hole_ids)
    else:
        h_edges = np.zeros((0, 2), dtype=np.int64)
        h_ids = np.zeros(0, dtype=np.int64)
    h_sorted = {tuple(e) for e in np.sort(h_edges, axis=1)}
    outer_edges = np.array([e for e in free if tuple(e) not in h_sorted], dtype=np.int64).reshape(-1, 2)
    edges = np.vstack([outer_edges, h_edges])
    tags = np.array([OUTER] * len(outer_edges) + [HOLE] * len(h_edges))
    hole_id = np.concatenate([np.full(len(outer_edges), -1, dtype=np.int64), h_ids])
    mesh = TriMesh(xy, triangles, edges, tags, hole_id)
    mesh.check()
    return mesh


def triangulate_rectangle(outer: Rectangle, h_target: float) -> TriMesh:
    """Structured mesh of an unperforated rectangle, at least ``1/h_target`` cells per side."""
    n = max(1, int(math.ceil(max(outer.x1 - outer.x0, outer.y1 - outer.y0) / h_target - 1e-9)))
    return structured_square(n, outer)


# --------------------------------------------------------------------------
# dof maps


def build_dofmap(
    mesh: TriMesh,
    dirichlet_tag: str | None = None,
    pairing: np.ndarray | None = None,
) -> DofMap:
    """Number free vertices; Dirichlet vertices are CONSTRAINED, periodic slaves share the master dof."""
    nv = mesh.n_vertices
    if dirichlet_tag is not None and dirichlet_tag not in set(mesh.boundary_tags.tolist()):
        if dirichlet_tag not in TAGS:
            raise KeyError(f"unknown tag {dirichlet_tag!r}")
    parent = np.arange(nv)

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    if pairing is not None:
        for s, t in pairing:
            rs, rt = find(int(s)), find(int(t))
            if rs != rt:
                lo, hi = min(rs, rt), max(rs, rt)
                parent[hi] = lo
    roots = np.array([find(i) for i in range(nv)])
    constrained = np.zeros(nv, dtype=bool)
    if dirichlet_tag is not None:
        constrained[mesh.tagged_vertices(dirichlet_tag)] = True
        # a whole periodic class is constrained if any member is
        bad_roots = np.unique(roots[constrained])
        constrained |= np.isin(roots, bad_roots)
    vertex_to_dof = np.full(nv, CONSTRAINED, dtype=np.int64)
    masters = np.unique(roots[~constrained])
    vertex_to_dof[~constrained] = np.searchsorted(masters, roots[~constrained])
    return DofMap(vertex_to_dof, len(masters))


# --------------------------------------------------------------------------
# plain-text dump


def dump_mesh(mesh: TriMesh, path: str | Path, snapshot: np.ndarray | None = None) -> None:
    """Write ``v x y`` / ``t i j k`` / ``b i j TAG`` lines (and ``s i value`` if given)."""
    lines = [f"v {float(x)!r} {float(y)!r}" for x, y in mesh.vertices]
    lines += [f"t {a} {b} {c}" for a, b, c in mesh.triangles]
    lines += [f"b {a} {b} {tag}" for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags)]
    if snapshot is not None:
        lines += [f"s {i} {float(v)!r}" for i, v in enumerate(snapshot)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path: str | Path) -> tuple[TriMesh, np.ndarray | None]:
    verts, tris, edges, tags, snap = [], [], [], [], {}
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        kind = parts[0]
        if kind == "v":
            verts.append((float(parts[1]), float(parts[2])))
        elif kind == "t":
            tris.append(tuple(int(p) for p in parts[1:4]))
        elif kind == "b":
            edges.append((int(parts[1]), int(parts[2])))
            tags.append(parts[3])
        elif kind == "s":
            snap[int(parts[1])] = float(parts[2])
        else:
            raise ValueError(f"unknown record {kind!r} in {path}")
    mesh = TriMesh(
        np.array(verts, dtype=float).reshape(-1, 2),
        np.array(tris, dtype=np.int64).reshape(-1, 3),
        np.array(edges, dtype=np.int64).reshape(-1, 2),
        np.array(tags),
    )
    values = np.array([snap[i] for i in range(len(snap))]) if snap else None
    return mesh, values
