"""Command line front end: ``dynhom {cell,run-eps,run-hom,converge,props}``."""

from __future__ import annotations

import argparse
import logging
import sys
import time

from .config import COMMAND_KIND, ConfigError, load_config
from .fem import SolverError
from .geometry import GeometryError
from .mesh import MeshError
from .nonlinear import AssumptionError
from .output import OutputError, emit_outputs
from .parabolic import BlowUpError
from . import studies

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("dynhom")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynhom", description="Perforated-domain homogenization toolkit with dynamic hole boundary conditions.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration; built-in defaults when omitted")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for independent sub-runs")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("cell", parents=[common], help="solve the periodic cell problem, report Q, theta*, sigma")
    sub.add_parser("run-eps", parents=[common], help="time-step the perforated problem for one epsilon")
    sub.add_parser("run-hom", parents=[common], help="time-step the homogenized problem")
    sub.add_parser("converge", parents=[common], help="epsilon -> 0 convergence table")
    sub.add_parser("props", parents=[common], help="boundary measure, trace ratio and uniform bound checks")
    return parser


def run(args):
    cfg = load_config(args.config)
    kind = COMMAND_KIND[args.command]
    if cfg.study.kind != kind:
        log.debug("study.kind=%s overridden by subcommand %s", cfg.study.kind, args.command)
    threads = max(1, args.threads)
    if kind == "cell":
        res = studies.cell_study(cfg, threads)
        return cfg, res["results"], {"correctors": res["correctors"]}
    if kind == "epsilon_run":
        coeffs = studies.cell_study(cfg, threads)["coeffs"]
        traj = studies.epsilon_run(cfg)
        eps = cfg.study.epsilon if cfg.study.epsilon is not None else cfg.geometry.epsilon_list[0]
        results = {"study": "epsilon_run", "epsilon": eps, "coefficients": coeffs.to_json(), "trajectory": studies.trajectory_summary(traj)}
        return cfg, results, {"trajectory": traj}
    if kind == "homogenized_run":
        res = studies.cell_study(cfg, threads)
        traj = studies.homogenized_run(cfg, res["coeffs"])
        return cfg, {"study": "homogenized_run", "coefficients": res["coeffs"].to_json(), "trajectory": studies.trajectory_summary(traj)}, {"homogenized": traj}
    if kind == "convergence":
        res = studies.convergence_study(cfg, threads)
        return cfg, res["results"], {"table": res["table"], "homogenized": res["homogenized"]}
    res = studies.properties_study(cfg, threads)
    res["results"]["coefficients"] = studies.cell_study(cfg, threads)["coeffs"].to_json()
    return cfg, res["results"], {}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        cfg, results, extras = run(args)
        out_dir = args.out or cfg.output.dir
        timings = {"wall_seconds": time.perf_counter() - t0}
        table = extras.get("table")
        if table is not None:
            timings["runtime_per_epsilon"] = {repr(r.epsilon): r.runtime for r in table.rows}
        paths = emit_outputs(results, cfg, out_dir, extras, timings)
    except (ConfigError, GeometryError, AssumptionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, BlowUpError, MeshError, studies.StudyError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OutputError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        log.info("wrote %s", p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
