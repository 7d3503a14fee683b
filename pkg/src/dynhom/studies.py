"""Study drivers: cell coefficients, single runs, the eps -> 0 convergence table and property checks."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cell import CG_TOL, compute_coefficients, energy_diagonal
from .config import RunConfig
from .geometry import PerforatedDomain, Rectangle, enumerate_holes, measures
from .mesh import triangulate_perforated, triangulate_rectangle
from .parabolic import EpsilonOperators, Trajectory, run_homogenized, run_with_operators
from .transfer import L2Comparison

log = logging.getLogger(__name__)


class StudyError(RuntimeError):
    """A sub-run failed; ``epsilon`` identifies which one."""

    def __init__(self, epsilon: float | None, cause: Exception):
        where = f"eps={epsilon:g}" if epsilon is not None else "homogenized run"
        super().__init__(f"{where}: {cause}")
        self.epsilon = epsilon
        self.cause = cause


def _map(fn, items, threads: int):
    """Ordered map; results come back in input order regardless of scheduling."""
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def domain_bump(outer: Rectangle):
    """``sin sin`` profile vanishing on the boundary of ``outer``."""
    lx, ly = outer.x1 - outer.x0, outer.y1 - outer.y0

    def phi(x):
        return np.sin(np.pi * (x[:, 0] - outer.x0) / lx) * np.sin(np.pi * (x[:, 1] - outer.y0) / ly)

    return phi


def make_domain(cfg: RunConfig, eps: float) -> PerforatedDomain:
    return enumerate_holes(cfg.geometry.outer(), cfg.cell(), eps)


def study_dt(cfg: RunConfig, eps_list=None, include_hom: bool = False) -> float:
    """One step size shared by every run of a study, ``dt_factor`` times the finest mesh size."""
    dz = cfg.discretization
    eps_list = cfg.geometry.epsilon_list if eps_list is None else eps_list
    hs = [dz.h_eps(e) for e in eps_list]
    if include_hom:
        hs.append(dz.h_hom)
    return dz.dt_factor * min(hs)


# --------------------------------------------------------------------------
# cell problem


def cell_study(cfg: RunConfig, threads: int = 1) -> dict:
    cell = cfg.cell()
    coeffs, correctors = compute_coefficients(cell, cfg.discretization.h_cell, threads)
    out = {
        "study": "cell",
        "coefficients": coeffs.to_json(),
        "energy_diagonal": [float(v) for v in energy_diagonal(correctors)] if correctors else [1.0, 1.0],
        "cg_tol": CG_TOL,
    }
    if correctors:
        out["cell_mesh"] = {"vertices": int(correctors[0].mesh.base.n_vertices), "triangles": int(correctors[0].mesh.base.n_triangles)}
    return {"results": out, "coeffs": coeffs, "correctors": correctors}


# --------------------------------------------------------------------------
# single runs


def epsilon_run(cfg: RunConfig, eps: float | None = None, dt: float | None = None, keep: str = "all") -> Trajectory:
    eps = cfg.study.epsilon if eps is None else eps
    eps = cfg.geometry.epsilon_list[0] if eps is None else eps
    dz = cfg.discretization
    h = dz.h_eps(eps)
    mesh = triangulate_perforated(make_domain(cfg, eps), h)
    ops = EpsilonOperators.build(mesh, eps)
    return run_with_operators(ops, cfg.problem_data(), dz.dt_factor * h if dt is None else dt, dz.cg_tol, dz.fixed_point_iters, keep)


def homogenized_run(cfg: RunConfig, coeffs=None, dt: float | None = None, threads: int = 1, keep: str = "all") -> Trajectory:
    dz = cfg.discretization
    if coeffs is None:
        coeffs, _ = compute_coefficients(cfg.cell(), dz.h_cell, threads)
    return run_homogenized(
        cfg.problem_data(), coeffs, dz.h_hom, dz.dt_factor * dz.h_hom if dt is None else dt,
        cfg.geometry.outer(), dz.cg_tol, dz.fixed_point_iters, keep,
    )


def trajectory_summary(traj: Trajectory) -> dict:
    return {
        "steps": len(traj.times) - 1,
        "dofs": int(traj.dofmap.n_dofs),
        "final_time": float(traj.times[-1]),
        "final_l2_norm": float(traj.l2_norm[-1]),
        "final_boundary_l2_norm": float(traj.boundary_l2_norm[-1]),
        "final_h1_seminorm": float(traj.h1_seminorm[-1]),
        "max_energy_residual": float(max(traj.energy_residual)),
        "l2_time_h1": traj.l2_time_h1(),
        "sup_h1": traj.sup_h1(),
        "l2_time_h1_derivative": traj.l2_time_h1_of_derivative(),
    }


# --------------------------------------------------------------------------
# convergence


@dataclass
class ErrorRow:
    epsilon: float
    n_holes: int
    error_T: float
    error_time: float
    measure_gap: float
    """``eps |dF_eps| - sigma |Omega|``."""
    runtime: float
    error_history: list[float] = field(default_factory=list, repr=False)


@dataclass
class ErrorTable:
    rows: list[ErrorRow]
    times: list[float]

    COLUMNS = ("epsilon", "n_holes", "error_T", "error_time", "measure_gap")

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.error_T for r in self.rows])

    def strictly_decreasing(self) -> bool:
        e = self.errors
        return bool(np.all(np.diff(e) < 0))

    def rates(self) -> list[float]:
        """Observed ``log(e1/e2)/log(eps1/eps2)`` between consecutive rows."""
        out = []
        for a, b in zip(self.rows, self.rows[1:]):
            if a.error_T > 0 and b.error_T > 0:
                out.append(math.log(a.error_T / b.error_T) / math.log(a.epsilon / b.epsilon))
            else:
                out.append(float("nan"))
        return out

    def to_rows(self) -> list[list[float]]:
        return [[r.epsilon, r.n_holes, r.error_T, r.error_time, r.measure_gap] for r in self.rows]


def convergence_study(cfg: RunConfig, threads: int = 1) -> dict:
    """Run the homogenized problem once and the perforated problem per ``eps``; tabulate ``||u_eps - u||``."""
    dz = cfg.discretization
    eps_list = list(cfg.geometry.epsilon_list)
    coeffs, _ = compute_coefficients(cfg.cell(), dz.h_cell, threads)
    dt = study_dt(cfg, eps_list, include_hom=True)
    data = cfg.problem_data()
    try:
        hom = homogenized_run(cfg, coeffs, dt)
    except Exception as exc:
        raise StudyError(None, exc) from exc
    hom_vertex = [hom.dofmap.scatter(u) for u in hom.snapshots]

    def one(eps):
        t0 = time.perf_counter()
        try:
            domain = make_domain(cfg, eps)
            mesh = triangulate_perforated(domain, dz.h_eps(eps))
            ops = EpsilonOperators.build(mesh, eps)
            traj = run_with_operators(ops, data, dt, dz.cg_tol, dz.fixed_point_iters, keep="all")
            cmp = L2Comparison(mesh, hom.mesh)
            hist = [cmp(traj.dofmap.scatter(u), uh) for u, uh in zip(traj.snapshots, hom_vertex)]
        except Exception as exc:
            raise StudyError(eps, exc) from exc
        steps = np.diff(traj.times)
        e_time = float(np.sqrt(np.sum(steps * np.square(hist[1:]))))
        _, perim = measures(domain)
        gap = eps * perim - coeffs.sigma * domain.outer.area
        log.info("eps=%g error=%.4e", eps, hist[-1])
        return ErrorRow(eps, domain.n_holes, hist[-1], e_time, gap, time.perf_counter() - t0, hist)

    rows = _map(one, eps_list, threads)
    table = ErrorTable(rows, list(hom.times))
    results = {
        "study": "convergence",
        "coefficients": coeffs.to_json(),
        "dt": dt,
        "homogenized": trajectory_summary(hom),
        "table": {"columns": list(ErrorTable.COLUMNS), "rows": table.to_rows()},
        "rates": table.rates(),
        "strictly_decreasing": table.strictly_decreasing(),
    }
    return {"results": results, "table": table, "coeffs": coeffs, "homogenized": hom}


# --------------------------------------------------------------------------
# property checks

_GL5 = np.polynomial.legendre.leggauss(5)


def hole_boundary_integral(domain: PerforatedDomain, phi) -> float:
    """``int_{dF_eps} phi`` with 5-point Gauss rules on every polygon edge."""
    s, w = (_GL5[0] + 1) / 2, _GL5[1] / 2
    total = 0.0
    for k in domain.holes:
        poly = domain.hole_polygon(k)
        a, b = poly, np.roll(poly, -1, axis=0)
        L = np.linalg.norm(b - a, axis=1)
        pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
        vals = phi(pts.reshape(-1, 2)).reshape(len(a), -1)
        total += float(np.sum(L * (vals @ w)))
    return total


def domain_integral(outer: Rectangle, phi, panels: int = 16, order: int = 8) -> float:
    """Composite tensor Gauss-Legendre quadrature on the rectangle."""
    x, w = np.polynomial.legendre.leggauss(order)
    s = ((np.arange(panels)[:, None] + (x[None, :] + 1) / 2) / panels).ravel()
    ws = np.tile(w / (2 * panels), panels)
    lx, ly = outer.x1 - outer.x0, outer.y1 - outer.y0
    XX, YY = np.meshgrid(outer.x0 + s * lx, outer.y0 + s * ly, indexing="ij")
    W = np.outer(ws, ws) * lx * ly
    return float(np.sum(W * phi(np.column_stack([XX.ravel(), YY.ravel()])).reshape(W.shape)))


def verify_boundary_measure(cfg: RunConfig, test_fn=None, eps_list=None) -> dict:
    """Compare ``eps * int_{dF_eps} phi`` with ``sigma * int_Omega phi`` per ``eps``."""
    outer = cfg.geometry.outer()
    phi = domain_bump(outer) if test_fn is None else test_fn
    cell = cfg.cell()
    limit = cell.sigma * domain_integral(outer, phi)
    rows = []
    for eps in (cfg.geometry.epsilon_list if eps_list is None else eps_list):
        dom = enumerate_holes(outer, cell, eps)
        val = eps * hole_boundary_integral(dom, phi)
        _, perim = measures(dom)
        rows.append({
            "epsilon": eps,
            "boundary_integral": val,
            "limit": limit,
            "gap": abs(val - limit),
            "unit_gap": abs(eps * perim - cell.sigma * outer.area),
        })
    gaps = [r["gap"] for r in rows]
    return {"rows": rows, "limit": limit, "gap_decreases": bool(gaps[-1] < gaps[0]) if len(gaps) > 1 else True}


def trace_ratio(ops: EpsilonOperators, v: np.ndarray) -> float:
    """``eps |v|^2_{dF_eps} / (|v|^2 + eps^2 |grad v|^2)``; 0 for ``v = 0``."""
    num = float(v @ (ops.B @ v))  # B already carries the factor eps
    den = float(v @ (ops.M @ v)) + ops.epsilon**2 * float(v @ (ops.A @ v))
    return num / den if den > 0 else 0.0


def verify_trace_inequality(cfg: RunConfig, eps_list=None, threads: int = 1) -> dict:
    """Max sampled trace ratio per ``eps`` over a smooth profile and seeded random nodal vectors."""
    eps_list = list(cfg.geometry.epsilon_list if eps_list is None else eps_list)
    outer = cfg.geometry.outer()
    bump = domain_bump(outer)
    nsamp, seed = cfg.study.trace_samples, cfg.study.seed

    def one(k_eps):
        k, eps = k_eps
        mesh = triangulate_perforated(make_domain(cfg, eps), cfg.discretization.h_eps(eps))
        ops = EpsilonOperators.build(mesh, eps)
        smooth = trace_ratio(ops, ops.dofmap.gather(bump(mesh.vertices)))
        rng = np.random.default_rng([seed, k])
        rand = [trace_ratio(ops, rng.uniform(-1.0, 1.0, ops.dofmap.n_dofs)) for _ in range(nsamp)]
        return {"epsilon": eps, "smooth_ratio": smooth, "random_max": max(rand) if rand else 0.0, "max_ratio": max([smooth] + rand)}

    rows = _map(one, list(enumerate(eps_list)), threads)
    mx = [r["max_ratio"] for r in rows]
    sm = [r["smooth_ratio"] for r in rows]
    return {
        "rows": rows,
        "max_over_min": max(mx) / min(mx) if min(mx) > 0 else float("inf"),
        "smooth_max_over_min": max(sm) / min(sm) if min(sm) > 0 else float("inf"),
    }


BOUND_KEYS = ("l2_time_h1", "sup_h1", "l2_time_h1_derivative")


def verify_uniform_bounds(cfg: RunConfig, eps_list=None, dt: float | None = None, threads: int = 1) -> dict:
    """Per-``eps`` norms of the trajectory and their spread across ``eps``."""
    eps_list = list(cfg.geometry.epsilon_list if eps_list is None else eps_list)
    dt = study_dt(cfg, eps_list) if dt is None else dt

    def one(eps):
        try:
            traj = epsilon_run(cfg, eps, dt, keep="last")
        except Exception as exc:
            raise StudyError(eps, exc) from exc
        return {"epsilon": eps, "l2_time_h1": traj.l2_time_h1(), "sup_h1": traj.sup_h1(), "l2_time_h1_derivative": traj.l2_time_h1_of_derivative()}

    rows = _map(one, eps_list, threads)
    spread = {}
    for key in BOUND_KEYS:
        vals = [r[key] for r in rows]
        spread[key] = max(vals) / min(vals) if min(vals) > 0 else (1.0 if max(vals) == 0 else float("inf"))
    return {"rows": rows, "dt": dt, "max_over_min": spread, "bounded": bool(all(v <= 2.0 for v in spread.values()))}


def properties_study(cfg: RunConfig, threads: int = 1) -> dict:
    results = {
        "study": "properties",
        "boundary_measure": verify_boundary_measure(cfg),
        "trace_inequality": verify_trace_inequality(cfg, threads=threads),
        "uniform_bounds": verify_uniform_bounds(cfg, threads=threads),
    }
    return {"results": results}
