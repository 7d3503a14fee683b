"""Result files: results.json, table.csv, plotdata/*.dat and timings.json."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .config import RunConfig
from .mesh import dump_mesh
from .parabolic import Trajectory


class OutputError(OSError):
    pass


def _clean(obj):
    """Plain JSON types; non-finite floats become strings so the file stays valid JSON."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc


def write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def write_dat(path: Path, x, y, header: str) -> None:
    lines = [f"# {header}"] + [f"{float(a)!r} {float(b)!r}" for a, b in zip(x, y)]
    _write_text(path, "\n".join(lines) + "\n")


def trajectory_plotdata(out: Path, traj: Trajectory, prefix: str = "") -> None:
    for name in ("l2_norm", "boundary_l2_norm", "h1_seminorm", "energy_residual"):
        write_dat(out / "plotdata" / f"{prefix}{name}.dat", traj.times, getattr(traj, name), f"time {name}")


def emit_outputs(results: dict, cfg: RunConfig, out_dir: str | Path, extras: dict | None = None, timings: dict | None = None) -> list[Path]:
    """Write every artifact of a completed study and return the written paths.

    Numerical files are deterministic; wall-clock data goes to timings.json only.
    """
    out = Path(out_dir)
    extras = extras or {}
    written = []
    summary = {"config": cfg.to_dict()}
    summary.update(results)
    write_json(out / "results.json", summary)
    written.append(out / "results.json")

    table = extras.get("table")
    if table is not None:
        path = out / "table.csv"
        try:
            out.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(table.COLUMNS)
                for row in table.to_rows():
                    w.writerow([repr(v) if isinstance(v, float) else v for v in row])
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc}") from exc
        written.append(path)
        write_dat(out / "plotdata" / "error_vs_epsilon.dat", [r.epsilon for r in table.rows], table.errors, "epsilon error_T")
        for k, r in enumerate(table.rows):
            write_dat(out / "plotdata" / f"error_history_{k}.dat", table.times, r.error_history, f"time error eps={r.epsilon!r}")

    for key, prefix in (("trajectory", ""), ("homogenized", "hom_")):
        traj = extras.get(key)
        if traj is not None:
            trajectory_plotdata(out, traj, prefix)
            try:
                traj.to_csv(out / f"{prefix}trajectory.csv")
                traj.dump_snapshot(out / f"{prefix}final.mesh")
            except OSError as exc:
                raise OutputError(f"cannot write trajectory files in {out}: {exc}") from exc
            written += [out / f"{prefix}trajectory.csv", out / f"{prefix}final.mesh"]

    for corr in extras.get("correctors") or []:
        path = out / f"corrector_{corr.j + 1}.mesh"
        try:
            dump_mesh(corr.mesh.base, path, corr.vertex_values())
        except OSError as exc:
            raise OutputError(f"cannot write {path}: {exc}") from exc
        written.append(path)

    props = results.get("study") == "properties"
    if props:
        bm = results["boundary_measure"]["rows"]
        write_dat(out / "plotdata" / "boundary_gap.dat", [r["epsilon"] for r in bm], [r["gap"] for r in bm], "epsilon gap")
        tr = results["trace_inequality"]["rows"]
        write_dat(out / "plotdata" / "trace_ratio.dat", [r["epsilon"] for r in tr], [r["max_ratio"] for r in tr], "epsilon max_ratio")
        ub = results["uniform_bounds"]["rows"]
        for key in ("l2_time_h1", "sup_h1", "l2_time_h1_derivative"):
            write_dat(out / "plotdata" / f"bound_{key}.dat", [r["epsilon"] for r in ub], [r[key] for r in ub], f"epsilon {key}")

    if timings:
        write_json(out / "timings.json", timings)
        written.append(out / "timings.json")
    return written
