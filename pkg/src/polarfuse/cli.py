"""Command-line interface: simulate, fuse, polar, eval.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 solver
non-convergence under --strict. Diagnostics go to stderr; data only to files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from .errors import InputError, PolarfuseError


class _Parser(argparse.ArgumentParser):
    """argparse exits with code 2 on usage errors; the contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="polarfuse",
                description="Multi-sensor fusion desk kit: simulate sensor "
                            "logs, fuse them, process polarization frames, "
                            "and evaluate trajectories.")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", parents=[], help="generate a sensor log from a scenario file")
    ps.add_argument("scenario", help="scenario YAML file")
    ps.add_argument("--out", required=True, help="output directory")
    ps.add_argument("--seed", type=int, default=None, help="override the scenario seed")

    pf = sub.add_parser("fuse", help="run the estimator on a sensor log directory")
    pf.add_argument("logdir", help="directory produced by `simulate`")
    pf.add_argument("--config", required=True, help="scenario YAML (estimator section is used)")
    pf.add_argument("--out", required=True, help="output directory")
    for name in ("mag", "flow", "height", "lidar", "vio", "loop"):
        pf.add_argument(f"--no-{name}", action="store_true",
                        help=f"disable {name} factors")
    pf.add_argument("--window", type=int, default=None, help="override window size")
    pf.add_argument("--strict", action="store_true",
                    help="exit 3 when any keyframe solve fails to converge")

    pp = sub.add_parser("polar", help="process a raw polarization mosaic (PGM P5)")
    pp.add_argument("mosaic", help="input 8-bit binary PGM")
    pp.add_argument("--out", required=True, help="output directory")
    pp.add_argument("--quality", type=float, default=0.9,
                    help="corner quality level in (0,1), default 0.9")
    pp.add_argument("--max-corners", type=int, default=500)
    pp.add_argument("--min-distance", type=float, default=4.0)
    pp.add_argument("--layout", default="90,45,135,0",
                    help="mosaic superpixel angles TL,TR,BL,BR")

    pe = sub.add_parser("eval", help="compare an estimated trajectory to ground truth")
    pe.add_argument("estimate", help="estimate TUM file")
    pe.add_argument("truth", help="ground-truth TUM file")
    pe.add_argument("--out", required=True, help="output directory")
    pe.add_argument("--align", choices=["none", "first", "umeyama"],
                    default="first", help="alignment mode (default first)")
    pe.add_argument("--max-dt", type=float, default=0.05,
                    help="association tolerance, s")
    pe.add_argument("--heading", action="store_true",
                    help="also report heading RMSE")
    return p


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def cmd_simulate(args) -> int:
    from .scenario import load_scenario
    from .sensors import LOG_FILES, save_log, simulate

    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario.seed = int(args.seed)
    log = simulate(scenario)
    os.makedirs(args.out, exist_ok=True)
    save_log(log, args.out)
    manifest = {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "config_sha256": _sha256(args.scenario),
        "files": list(LOG_FILES),
    }
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(LOG_FILES)} stream files to {args.out}", file=sys.stderr)
    return 0


def cmd_fuse(args) -> int:
    from .estimator import resolve_fusion_config, run_estimator
    from .scenario import load_scenario
    from .sensors import load_log, write_tum

    scenario = load_scenario(args.config)
    config = resolve_fusion_config(scenario)
    config.use_mag = config.use_mag and not args.no_mag
    config.use_flow = config.use_flow and not args.no_flow
    config.use_height = config.use_height and not args.no_height
    config.use_lidar = config.use_lidar and not args.no_lidar
    config.use_vio = config.use_vio and not args.no_vio
    config.use_loops = config.use_loops and not args.no_loop
    if args.window is not None:
        config.window = args.window
    config.validate()

    need = {"imu"}
    if config.use_mag:
        need.add("mag")
    if config.use_flow or config.use_height:
        need.add("flow")
    if config.use_lidar:
        need.add("lidar")
    if config.use_vio:
        need.add("vio")
    if config.use_loops:
        need.add("loop")
    log = load_log(args.logdir, need=need)
    result = run_estimator(log, config)

    os.makedirs(args.out, exist_ok=True)
    write_tum(os.path.join(args.out, "estimate.tum"), result.t,
              result.positions(), result.quaternions(), precision=9)
    with open(os.path.join(args.out, "gating.csv"), "w") as fh:
        fh.write("t,innovation_rad,accepted\n")
        for g in result.gating:
            fh.write(f"{g.t:.9g},{g.innovation:.9g},{int(g.accepted)}\n")
    with open(os.path.join(args.out, "stats.json"), "w") as fh:
        json.dump(result.stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    not_converged = sum(1 for s in result.stats["keyframe_stats"]
                        if not s["converged"])
    print(f"fused {result.stats['keyframes']} keyframes "
          f"({not_converged} non-converged solves)", file=sys.stderr)
    if args.strict and not_converged:
        print("strict mode: solver failed to converge", file=sys.stderr)
        return 3
    return 0


def cmd_polar(args) -> int:
    from . import pnm
    from .polarimetry import PolarMosaic, detect_corners, detect_enhanced, process_mosaic

    try:
        layout = tuple(int(x) for x in args.layout.split(","))
    except ValueError:
        raise InputError(f"bad layout {args.layout!r}")
    if not 0.0 < args.quality < 1.0:
        raise InputError("quality must lie in (0, 1)")
    mosaic = PolarMosaic(pnm.read_pgm(args.mosaic), layout=layout)
    rgb = process_mosaic(mosaic)
    os.makedirs(args.out, exist_ok=True)
    pnm.write_ppm(os.path.join(args.out, "rgb.ppm"), rgb.rgb)

    def dump(path, corners):
        with open(path, "w") as fh:
            fh.write("x,y,score\n")
            for c in corners:
                fh.write(f"{c.x:.6f},{c.y:.6f},{c.score:.6f}\n")

    gray = detect_corners(rgb.g, args.quality, args.max_corners, args.min_distance)
    enh = detect_enhanced(rgb, args.quality, args.max_corners, args.min_distance)
    dump(os.path.join(args.out, "corners_gray.csv"), gray)
    dump(os.path.join(args.out, "corners_enhanced.csv"), enh)
    print(f"{len(gray)} grayscale corners, {len(enh)} enhanced corners",
          file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    from .evaluation import evaluate, load_tum, write_report

    est = load_tum(args.estimate)
    truth = load_tum(args.truth)
    report = evaluate(est, truth, mode=args.align, max_dt=args.max_dt,
                      with_heading=args.heading)
    os.makedirs(args.out, exist_ok=True)
    write_report(report, os.path.join(args.out, "report.csv"),
                 os.path.join(args.out, "errors.csv"),
                 os.path.join(args.out, "summary.txt"))
    print(f"ate rmse {report.ate_rmse:.6f} m over {len(report.t)} pairs "
          f"({report.length:.1f} m)", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "fuse":
            return cmd_fuse(args)
        if args.command == "polar":
            return cmd_polar(args)
        if args.command == "eval":
            return cmd_eval(args)
        raise _UsageError(f"unknown command {args.command!r}")
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PolarfuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
