import csv

import numpy as np
import pytest

from dynhom.cell import HomogenizedCoefficients
from dynhom.geometry import HoleSpec, Rectangle, enumerate_holes, make_unit_cell
from dynhom.mesh import OUTER, TriMesh, build_dofmap, load_mesh, structured_square, triangulate_perforated
from dynhom.nonlinear import Nonlinearity, linear_tanh, power, zero
from dynhom.parabolic import (
    BlowUpError,
    EpsilonOperators,
    HomogenizedOperators,
    ProblemData,
    energy_residual,
    initial_state,
    run_homogenized,
    run_with_operators,
    step_epsilon,
    step_homogenized,
)


def bump(x):
    return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])


LINEAR = Nonlinearity(power(2), power(2))
NONE = Nonlinearity(zero(), zero())


@pytest.fixture(scope="module")
def eps_ops():
    cell = make_unit_cell(HoleSpec("disc", 0.25, polygon_segments=16))
    mesh = triangulate_perforated(enumerate_holes(Rectangle(), cell, 1 / 4), 1 / 16)
    return EpsilonOperators.build(mesh, 1 / 4)


def test_zero_state_zero_data_stays_zero(eps_ops):
    data = ProblemData(Nonlinearity(power(4), linear_tanh()), T_final=0.1)
    u = np.zeros(eps_ops.dofmap.n_dofs)
    assert not step_epsilon(u, data, 0.1, 0.1, eps_ops).any()
    traj = run_with_operators(eps_ops, data, 0.02)
    assert all(not s.any() for s in traj.snapshots)
    assert max(traj.energy_residual) == 0.0


def test_linear_unforced_decay_of_combined_norm(eps_ops):
    data = ProblemData(NONE, kappa=1.0, u0=bump, T_final=0.2)
    traj = run_with_operators(eps_ops, data, 0.01)
    norms = [eps_ops.combined_norm(u) for u in traj.snapshots]
    assert np.all(np.diff(norms) <= 1e-14)


def dense_p1(mesh):
    """Independent dense P1 mass, stiffness and lumped mass by element loops."""
    n = mesh.n_vertices
    M, A = np.zeros((n, n)), np.zeros((n, n))
    for tri in mesh.triangles:
        p = mesh.vertices[tri]
        J = np.array([p[1] - p[0], p[2] - p[0]]).T
        area = 0.5 * np.linalg.det(J)
        G = np.linalg.solve(J.T, np.array([[-1, 1, 0], [-1, 0, 1]]))  # gradients as columns
        A[np.ix_(tri, tri)] += area * G.T @ G
        M[np.ix_(tri, tri)] += area / 12 * (np.ones((3, 3)) + np.eye(3))
    return M, A


def test_linear_step_matches_dense_oracle():
    mesh = structured_square(4)
    ops = EpsilonOperators.build(mesh, 0.0)
    M, A = dense_p1(mesh)
    free = np.flatnonzero(build_dofmap(mesh, OUTER).vertex_to_dof >= 0)
    Mf, Af = M[np.ix_(free, free)], A[np.ix_(free, free)]
    lumped = M[free].sum(axis=1)
    kappa, dt = 1.5, 0.05
    data = ProblemData(Nonlinearity(power(2), zero()), kappa=kappa, h=lambda x, t: (1 + t) * bump(x), u0=bump, T_final=0.25)
    traj = run_with_operators(ops, data, dt, cg_tol=1e-14)
    u = bump(mesh.vertices)[free]
    for n, t in enumerate(traj.times[1:], start=1):
        load = M[free] @ ((1 + t) * bump(mesh.vertices))
        u = np.linalg.solve(Mf + dt * (Af + kappa * Mf), Mf @ u + dt * (load - lumped * u))
        assert np.abs(traj.snapshots[n] - u).max() < 1e-8


def test_T_zero_gives_initial_only(eps_ops):
    data = ProblemData(LINEAR, u0=bump, T_final=0.0)
    traj = run_with_operators(eps_ops, data, 0.1)
    assert traj.times == [0.0] and len(traj.snapshots) == 1
    assert np.array_equal(traj.snapshots[0], eps_ops.dofmap.gather(bump(eps_ops.mesh.vertices)))


def test_psi0_seeds_hole_dofs(eps_ops):
    data = ProblemData(LINEAR, u0=bump, psi0=lambda x: np.full(len(x), 2.0), T_final=0.0)
    u = initial_state(eps_ops, data)
    hole = eps_ops.hole_dofs
    assert np.all(u[hole] == 2.0)
    others = np.setdiff1d(np.arange(len(u)), hole)
    assert np.array_equal(u[others], eps_ops.dofmap.gather(bump(eps_ops.mesh.vertices))[others])


def test_energy_residual_zero_and_relabel_invariant(eps_ops):
    data = ProblemData(Nonlinearity(power(4), power(2)), h=lambda x, t: 5 * bump(x), rho=lambda x, t: bump(x), u0=bump, T_final=0.05)
    z = np.zeros(eps_ops.dofmap.n_dofs)
    assert energy_residual(z, z, ProblemData(LINEAR), 0.1, eps_ops, 0.1) == 0.0
    mesh = eps_ops.mesh
    traj = run_with_operators(eps_ops, data, 0.01)
    perm = np.random.default_rng(3).permutation(mesh.n_vertices)
    inv = np.argsort(perm)
    m2 = TriMesh(mesh.vertices[perm], inv[mesh.triangles], inv[mesh.boundary_edges], mesh.boundary_tags)
    traj2 = run_with_operators(EpsilonOperators.build(m2, eps_ops.epsilon), data, 0.01)
    assert np.allclose(traj.energy_residual, traj2.energy_residual, rtol=1e-8, atol=1e-12)


def test_energy_defect_first_order_with_holes(eps_ops):
    # time-integrated defect; the boundary mass and boundary reaction take part here
    data = ProblemData(LINEAR, u0=bump, rho=lambda x, t: bump(x), T_final=0.2)
    res = []
    for dt in (1 / 256, 1 / 512, 1 / 1024):
        r = run_with_operators(eps_ops, data, dt, cg_tol=1e-13).energy_residual
        res.append(dt * sum(r[1:]))
    assert 1.6 <= res[0] / res[1] <= 2.4 and 1.6 <= res[1] / res[2] <= 2.4


def test_fixed_point_corrections_solve_implicit_equation(eps_ops):
    data = ProblemData(Nonlinearity(power(4), linear_tanh()), u0=lambda x: 2 * bump(x), T_final=0.01)
    dt = 0.01
    u0 = initial_state(eps_ops, data)
    MB = eps_ops.M + eps_ops.B
    lhs = MB + dt * (eps_ops.A + eps_ops.M)

    def implicit_defect(u):
        r = lhs @ u - MB @ u0 - dt * (eps_ops.loads(data, dt) - eps_ops.reactions(data, u))
        return np.linalg.norm(r)

    lagged = step_epsilon(u0, data, dt, dt, eps_ops, cg_tol=1e-13)
    corrected = step_epsilon(u0, data, dt, dt, eps_ops, cg_tol=1e-13, fixed_point_iters=30)
    assert implicit_defect(corrected) < 1e-3 * implicit_defect(lagged)


def test_blowup_guard(eps_ops):
    data = ProblemData(LINEAR, h=lambda x, t: 1e3 * bump(x), T_final=0.1)
    u = np.zeros(eps_ops.dofmap.n_dofs)
    with pytest.raises(BlowUpError):
        step_epsilon(u, data, 0.1, 0.1, eps_ops, guard=1e-3)


def test_homogenized_degenerates_to_plain_step():
    mesh = structured_square(8)
    data = ProblemData(Nonlinearity(power(4), power(2)), h=lambda x, t: 3 * bump(x), u0=bump, T_final=0.1)
    eops = EpsilonOperators.build(mesh, 0.0)
    hops = HomogenizedOperators.build(mesh, HomogenizedCoefficients.identity())
    u = initial_state(eops, data)
    a = step_epsilon(u, data, 0.05, 0.05, eops, cg_tol=1e-14)
    b = step_homogenized(u, data, 0.05, 0.05, hops, cg_tol=1e-14)
    assert np.abs(a - b).max() < 1e-12


def test_homogenized_zero():
    data = ProblemData(LINEAR, T_final=0.1)
    traj = run_homogenized(data, HomogenizedCoefficients(0.7 * np.eye(2), 0.8, 1.5), 1 / 8, 0.02)
    assert all(not s.any() for s in traj.snapshots)


def test_homogenized_max_principle():
    coeffs = HomogenizedCoefficients(0.67 * np.eye(2), 0.8, 1.57)
    data = ProblemData(NONE, u0=bump, T_final=0.5)
    for h in (1 / 8, 1 / 16, 1 / 32):
        traj = run_homogenized(data, coeffs, h, h / 2)
        S = np.array(traj.snapshots)
        assert S.min() >= 0.0 and S.max() <= 1.0


def test_homogenized_half_steps_agree_to_second_order():
    coeffs = HomogenizedCoefficients(0.67 * np.eye(2), 0.8, 1.57)
    data = ProblemData(NONE, u0=bump, T_final=1.0)
    mesh = structured_square(16)
    ops = HomogenizedOperators.build(mesh, coeffs)
    u0 = ops.dofmap.gather(bump(mesh.vertices))
    diffs = []
    for dt in (0.02, 0.01, 0.005):
        one = step_homogenized(u0, data, dt, dt, ops, cg_tol=1e-14)
        half = step_homogenized(u0, data, dt / 2, dt / 2, ops, cg_tol=1e-14)
        two = step_homogenized(half, data, dt, dt / 2, ops, cg_tol=1e-14)
        diffs.append(np.abs(one - two).max())
    assert 3.0 < diffs[0] / diffs[1] < 5.0 and 3.0 < diffs[1] / diffs[2] < 5.0


def test_csv_and_snapshot_export(tmp_path, eps_ops):
    data = ProblemData(LINEAR, u0=bump, T_final=0.05)
    traj = run_with_operators(eps_ops, data, 0.01)
    traj.to_csv(tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["time", "l2_norm", "boundary_l2_norm", "h1_seminorm", "energy_residual"]
    assert len(rows) == len(traj.times) + 1
    assert all(np.isfinite(float(v)) for row in rows[1:] for v in row)
    traj.dump_snapshot(tmp_path / "s.mesh")
    _, vals = load_mesh(tmp_path / "s.mesh")
    assert np.array_equal(vals, traj.dofmap.scatter(traj.final))


def test_run_is_deterministic(eps_ops):
    data = ProblemData(Nonlinearity(power(4), power(2)), h=lambda x, t: 10 * bump(x), rho=lambda x, t: bump(x), T_final=0.05)
    a = run_with_operators(eps_ops, data, 0.01)
    b = run_with_operators(eps_ops, data, 0.01)
    assert all(np.array_equal(x, y) for x, y in zip(a.snapshots, b.snapshots))
    assert a.energy_residual == b.energy_residual


def test_problem_data_validation():
    with pytest.raises(ValueError):
        ProblemData(LINEAR, u0=lambda x: np.ones(len(x))).validate()
    with pytest.raises(ValueError):
        ProblemData(LINEAR, rho=lambda x, t: np.ones(len(x))).validate()
    with pytest.raises(ValueError):
        ProblemData(LINEAR, kappa=0.0).validate()
    ProblemData(LINEAR, u0=bump, rho=lambda x, t: bump(x)).validate()
