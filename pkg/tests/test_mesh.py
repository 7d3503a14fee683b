import numpy as np
import pytest
from hypothesis import given, strategies as st

from dynhom.geometry import HoleSpec, Rectangle, enumerate_holes, make_unit_cell, measures
from dynhom.mesh import (
    CONSTRAINED,
    HOLE,
    OUTER,
    PERIODIC,
    MeshError,
    build_dofmap,
    dump_mesh,
    load_mesh,
    structured_square,
    triangulate_cell,
    triangulate_perforated,
    triangulate_rectangle,
)

CELLS = {
    "disc": HoleSpec("disc", 0.25, polygon_segments=16),
    "disc64": HoleSpec("disc", 0.25, polygon_segments=64),
    "square": HoleSpec("square", 0.25, polygon_segments=16),
    "ellipse": HoleSpec("ellipse", (0.3, 0.2), polygon_segments=32),
    "small": HoleSpec("disc", 0.05, polygon_segments=16),
    "large": HoleSpec("disc", 0.3, polygon_segments=32),
}


def euler_characteristic(mesh):
    return mesh.n_vertices - len(mesh.all_edges()) + mesh.n_triangles


def test_no_hole_cell_is_structured_and_fully_paired():
    pm = triangulate_cell(make_unit_cell(None), 1 / 4)
    assert pm.base.n_vertices == 25 and pm.base.n_triangles == 32
    face = pm.base.tagged_vertices(PERIODIC)
    # every vertex of the right/top faces is a slave, every left/bottom one a master
    v = pm.base.vertices
    slaves = set(pm.pairing[:, 0].tolist())
    assert slaves == set(np.flatnonzero((np.isclose(v[:, 0], 1) | np.isclose(v[:, 1], 1))).tolist())
    assert set(face.tolist()) >= slaves


@pytest.mark.parametrize("name", list(CELLS))
def test_cell_mesh_area_and_pairing(name):
    cell = make_unit_cell(CELLS[name])
    pm = triangulate_cell(cell, 1 / 16)
    m = pm.base
    assert np.all(m.signed_areas() > 0)
    assert m.area() == pytest.approx(cell.area_Ystar, abs=1e-12)
    assert m.edge_lengths(HOLE).sum() == pytest.approx(cell.perimeter_dF, abs=1e-12)
    d = m.vertices[pm.pairing[:, 0]] - m.vertices[pm.pairing[:, 1]]
    ok = np.isclose(d, [1, 0], atol=0, rtol=0).all(axis=1) | np.isclose(d, [0, 1], atol=0, rtol=0).all(axis=1)
    assert ok.all(), "paired vertices must differ by exactly one period"
    assert not set(pm.pairing.ravel().tolist()) & set(m.tagged_vertices(HOLE).tolist())
    assert m.max_edge() <= 2 / 16
    # planar triangulation of a square with one hole
    assert euler_characteristic(m) == 0


def test_corners_form_one_dof(disc_cell):
    pm = triangulate_cell(disc_cell, 1 / 8)
    dm = build_dofmap(pm.base, None, pm.pairing)
    v = pm.base.vertices
    corners = [int(np.flatnonzero(np.all(np.isclose(v, c), axis=1))[0]) for c in ([0, 0], [1, 0], [0, 1], [1, 1])]
    assert len({int(dm.vertex_to_dof[c]) for c in corners}) == 1


@pytest.mark.parametrize("n", [2, 4, 7])
def test_periodic_structured_square_dofs(n):
    pm = triangulate_cell(make_unit_cell(None), 1 / n)
    assert build_dofmap(pm.base, None, pm.pairing).n_dofs == n * n


def test_dofmap_no_constraints_and_dirichlet():
    m = structured_square(4)
    assert build_dofmap(m).n_dofs == m.n_vertices == 25
    dm = build_dofmap(m, OUTER)
    assert dm.n_dofs == 9
    assert np.all(dm.vertex_to_dof[m.tagged_vertices(OUTER)] == CONSTRAINED)
    assert sorted(dm.vertex_to_dof[dm.vertex_to_dof >= 0]) == list(range(9))


def test_dofmap_scatter_gather_roundtrip(disc_cell, rng):
    pm = triangulate_cell(disc_cell, 1 / 8)
    dm = build_dofmap(pm.base, None, pm.pairing)
    x = rng.standard_normal(dm.n_dofs)
    assert np.array_equal(dm.gather(dm.scatter(x)), x)
    vals = dm.scatter(x)
    assert np.array_equal(vals[pm.pairing[:, 0]], vals[pm.pairing[:, 1]])


def test_perforated_no_holes():
    dom = enumerate_holes(Rectangle(), make_unit_cell(None), 1 / 4)
    m = triangulate_perforated(dom, 1 / 16)
    assert len(m.tagged_edges(HOLE)) == 0
    assert m.area() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("eps", [1 / 4, 1 / 8])
def test_perforated_counts_and_measures(disc_cell, eps):
    dom = enumerate_holes(Rectangle(), disc_cell, eps)
    m = triangulate_perforated(dom, eps / 4)
    area, perim = measures(dom)
    assert len(m.tagged_edges(HOLE)) == dom.n_holes * 16
    assert m.edge_lengths(HOLE).sum() == pytest.approx(perim, abs=1e-10)
    assert m.area() == pytest.approx(area, abs=1e-10)
    assert m.edge_lengths(OUTER).sum() == pytest.approx(4.0, abs=1e-12)
    assert set(np.unique(m.hole_id[m.boundary_tags == HOLE]).tolist()) == set(range(dom.n_holes))
    assert euler_characteristic(m) == 1 - dom.n_holes


def test_perforated_rejects_coarse_h(disc_cell):
    with pytest.raises(MeshError):
        triangulate_perforated(enumerate_holes(Rectangle(), disc_cell, 1 / 4), 1 / 8)


def test_cell_rejects_h_above_clearance(disc_cell):
    with pytest.raises(MeshError):
        triangulate_cell(disc_cell, 0.3)


@pytest.mark.parametrize("name", list(CELLS))
@pytest.mark.parametrize("h", [1 / 8, 1 / 16, 1 / 32, 1 / 64])
def test_min_angle_at_least_15_degrees(name, h):
    cell = make_unit_cell(CELLS[name])
    assert triangulate_cell(cell, h).base.min_angle() >= 15.0


def test_perforated_min_angle(disc_cell):
    m = triangulate_perforated(enumerate_holes(Rectangle(), disc_cell, 1 / 8), 1 / 64)
    assert m.min_angle() >= 15.0


def test_refinement_keeps_tagged_lengths(disc_cell):
    lengths = [triangulate_cell(disc_cell, h).base.edge_lengths(HOLE).sum() for h in (1 / 8, 1 / 16, 1 / 32)]
    assert np.allclose(lengths, disc_cell.perimeter_dF, atol=1e-13)


def test_rectangle_mesh():
    m = triangulate_rectangle(Rectangle(0, 0, 2, 1), 1 / 4)
    assert m.area() == pytest.approx(2.0)
    assert np.all(m.signed_areas() > 0)


def test_dump_roundtrip_bit_exact(tmp_path, disc_cell, rng):
    m = triangulate_perforated(enumerate_holes(Rectangle(), disc_cell, 1 / 4), 1 / 16)
    vals = rng.standard_normal(m.n_vertices)
    dump_mesh(m, tmp_path / "a.mesh", vals)
    m2, vals2 = load_mesh(tmp_path / "a.mesh")
    assert np.array_equal(m.vertices, m2.vertices)
    assert np.array_equal(m.triangles, m2.triangles)
    assert np.array_equal(m.boundary_edges, m2.boundary_edges)
    assert list(m.boundary_tags) == list(m2.boundary_tags)
    assert np.array_equal(vals, vals2)
    dump_mesh(m2, tmp_path / "b.mesh", vals2)
    assert (tmp_path / "a.mesh").read_bytes() == (tmp_path / "b.mesh").read_bytes()


@given(r=st.floats(0.05, 0.35), n=st.sampled_from([8, 16, 24, 32]), k=st.integers(3, 6))
def test_cell_mesh_invariants_random(r, n, k):
    cell = make_unit_cell(HoleSpec("disc", r, polygon_segments=n))
    h = 1 / (2**k)
    if h >= 0.5 - r:
        return
    pm = triangulate_cell(cell, h)
    m = pm.base
    assert np.all(m.signed_areas() > 0)
    assert abs(m.area() - cell.area_Ystar) < 1e-12
    assert euler_characteristic(m) == 0
    m.check()
