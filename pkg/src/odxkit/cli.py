"""``odx`` command line.

Exit codes: 0 ok, 1 domain failure (validation errors, aborted runs, nothing
to score), 2 input/output problems (missing or unparsable files), 64 usage.
Set ``ODX_LOG`` (e.g. ``DEBUG``) to change the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

EXIT_OK, EXIT_DOMAIN, EXIT_IO, EXIT_USAGE = 0, 1, 2, 64

log = logging.getLogger("odxkit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _triple(text: str):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y,heading, got {text!r}") from None
    if len(vals) != 3 or not all(math.isfinite(v) for v in vals):
        raise argparse.ArgumentTypeError(f"expected three finite numbers x,y,heading, got {text!r}")
    return tuple(vals)


def _pair(text: str):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y, got {text!r}") from None
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected x,y, got {text!r}")
    return tuple(vals)


def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _load_network(path):
    from .opendrive_parser import load_opendrive

    network, issues = load_opendrive(path)
    for issue in issues:
        if issue.severity == "error":
            log.warning("%s: %s", issue.locator, issue.message)
    return network


# -- commands ------------------------------------------------------------------------


def cmd_parse(args, config) -> int:
    from .opendrive_parser import NetworkRejected, load_opendrive, network_summary, validate_network

    try:
        network, issues = load_opendrive(args.map, strict=args.strict)
        issues = list(issues) + validate_network(network)
    except NetworkRejected as exc:
        network, issues = None, exc.issues
    report = {
        "map": str(args.map),
        "strict": args.strict,
        "ok": not any(i.severity == "error" for i in issues),
        "issues": [i.to_dict() for i in issues],
        "counts": network_summary(network)["counts"] if network is not None else None,
    }
    text = json.dumps(report, indent=2) + "\n"
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK if report["ok"] else EXIT_DOMAIN


def cmd_vectorize(args, config) -> int:
    from .map_features import discretize_lanes, rough_lane_record, select_window, vectorize

    network = _load_network(args.map)
    lanes = select_window(discretize_lanes(network, args.ds), args.ego, args.half_extent)
    lines = [json.dumps(rough_lane_record(lane)) for lane in lanes]
    Path(args.out).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    if args.vectors:
        rows = [[v.record() for v in vectorize(lane)] for lane in lanes if len(lane) > 1]
        Path(args.vectors).write_text(json.dumps(rows) + "\n", encoding="utf-8")
    log.info("wrote %d rough lanes to %s", len(lanes), args.out)
    return EXIT_OK


def cmd_raster(args, config) -> int:
    from .map_features import GridSpec, rasterize_network
    from .tensor_io import write_pgm, write_tensor

    network = _load_network(args.map)
    spec = GridSpec.centered(args.size, args.window)
    grid = rasterize_network(network, args.ego, spec, args.stroke, args.ds)
    write_pgm(args.out, grid.data[0], scale=255.0)
    if args.tensor:
        write_tensor(args.tensor, grid.data)
    return EXIT_OK


def _run_one(job):
    scenario_path, policy, seed, out_dir, expert_cfg = job
    from .expert_policy import ExpertConfig, make_policy
    from .sim_harness import _load_map, load_scenario, run_scenario, write_run

    scenario = load_scenario(scenario_path)
    if seed is not None:
        scenario.seed = seed
    network, _ = _load_map(scenario.map_path())
    cfg = ExpertConfig.from_dict(expert_cfg)
    if scenario.target_speed is not None and "target_speed" not in expert_cfg:
        cfg.target_speed = float(scenario.target_speed)
    result = run_scenario(scenario, make_policy(policy, network, cfg), dt=cfg.dt)
    write_run(out_dir, result)
    return scenario.id, policy, result.outcome


def _scenario_files(paths: Sequence[str]) -> List[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(p.glob("*.json")))
        else:
            out.append(p)
    return out


def cmd_run(args, config) -> int:
    from .sim_harness import load_scenario, packaged_scenarios

    files = _scenario_files(args.scenario) if args.scenario else []
    if args.suite:
        files += packaged_scenarios()
    if not files:
        raise UsageError("give scenario files or --suite")
    policies = args.policy or ["mmfn"]
    single = len(files) == 1 and len(policies) == 1
    expert_cfg = dict(config.get("expert", {}))
    jobs = []
    for f in files:
        sid = load_scenario(f).id  # validates early, before any worker starts
        for pol in policies:
            out = Path(args.out) if single else Path(args.out) / pol / sid
            jobs.append((str(f), pol, args.seed, str(out), expert_cfg))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    for sid, pol, outcome in sorted(results):
        log.info("%s %s: %s", sid, pol, outcome)
    return EXIT_DOMAIN if any(o == "aborted" for _, _, o in results) else EXIT_OK


def cmd_score(args, config) -> int:
    from .scoring import DEFAULT_COEFFICIENTS, aggregate, score_directory, write_reports

    root = Path(args.traces)
    if not root.is_dir():
        raise FileNotFoundError(f"no such directory: {root}")
    coeffs = dict(DEFAULT_COEFFICIENTS)
    coeffs.update(config.get("scoring", {}).get("coefficients", {}))
    by_policy = score_directory(root, coeffs)
    if not by_policy:
        log.error("no runs found under %s", root)
        return EXIT_DOMAIN
    write_reports(by_policy, args.out, args.json, args.plot)
    for policy, results in by_policy.items():
        agg = aggregate(results)
        print(f"{policy or 'runs'}: DS {agg['DS']:.2f}  RC {agg['RC']:.2f}  "
              f"infra/km {agg['infra_per_km']:.3f}  collisions {agg['collisions']}")
    return EXIT_OK


def cmd_fuse_demo(args, config) -> int:
    import numpy as np

    from .fusion_forward import ToyFusionModel
    from .map_features import read_rough_lanes, vectorize
    from .sensor_pipeline import (lidar_to_bev, radar_features, radar_graph_weights, radar_select,
                                  read_lidar, read_radar_csv)
    from .tensor_io import write_bundle

    for p in (args.lanes, args.lidar, args.radar):
        if not Path(p).is_file():
            raise FileNotFoundError(f"missing input: {p}")
    lanes = read_rough_lanes(args.lanes)
    polylines = [vectorize(lane) for lane in lanes if len(lane) > 1]
    grid = lidar_to_bev(read_lidar(args.lidar))
    matrix = radar_select(read_radar_csv(args.radar))
    radar = radar_features(matrix, radar_graph_weights(matrix))
    model = ToyFusionModel(seed=args.seed)
    wps = model.forward(polylines, grid.data, radar, matrix.valid_count, np.array(args.goal))
    out = {"seed": args.seed, "goal": list(args.goal), "waypoints": wps.tolist()}
    Path(args.out).write_text(json.dumps(out, indent=2) + "\n", encoding="utf-8")
    if args.weights:
        write_bundle(args.weights, model.tensors())
    return EXIT_OK


# -- wiring --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="odx", description="OpenDRIVE map features, expert simulation and scoring.")
    p.add_argument("--config", help="JSON or TOML config file with [expert] and [scoring] tables")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("parse", help="parse and validate an .xodr map")
    s.add_argument("map")
    s.add_argument("--strict", action="store_true", help="treat approximated geometry as an error")
    s.add_argument("--report", help="write the validation report here instead of stdout")
    s.set_defaults(func=cmd_parse)

    for name, func, helptext in (("vectorize", cmd_vectorize, "write windowed rough lanes as line JSON"),
                                 ("raster", cmd_raster, "write a BEV lane raster as PGM")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("map")
        s.add_argument("--ego", type=_triple, required=True, metavar="X,Y,HEADING")
        s.add_argument("--ds", type=_positive, default=1.0, help="sampling step in metres")
        s.add_argument("--out", required=True)
        if name == "vectorize":
            s.add_argument("--half-extent", type=_positive, default=14.0)
            s.add_argument("--vectors", help="also write lane vector records as JSON")
        else:
            s.add_argument("--size", type=int, default=256, help="image side in pixels")
            s.add_argument("--window", type=_positive, default=28.0, help="window side in metres")
            s.add_argument("--stroke", type=_positive, default=0.3, help="stroke width in metres")
            s.add_argument("--tensor", help="also write the raster as a BEVG0001 dump")
        s.set_defaults(func=func)

    s = sub.add_parser("run", help="simulate scenarios with an expert policy")
    s.add_argument("scenario", nargs="*", help="scenario JSON files or directories")
    s.add_argument("--suite", action="store_true", help="add the packaged scenario suite")
    s.add_argument("--policy", action="append", choices=["mmfn", "baseline_auto"],
                   help="repeatable; default mmfn")
    s.add_argument("--seed", type=int, help="override the scenario seed")
    s.add_argument("--jobs", type=int, default=1, help="worker processes for batch runs")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("score", help="score run directories")
    s.add_argument("traces")
    s.add_argument("--out", required=True, help="CSV report")
    s.add_argument("--json", help="JSON report")
    s.add_argument("--plot", help="SVG plot")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("fuse-demo", help="toy end-to-end fusion forward pass")
    s.add_argument("lanes")
    s.add_argument("lidar")
    s.add_argument("radar")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--goal", type=_pair, default=(20.0, 0.0), metavar="X,Y")
    s.add_argument("--out", required=True)
    s.add_argument("--weights", help="write the seeded weights as a tensor bundle directory")
    s.set_defaults(func=cmd_fuse_demo)
    return p


def _read_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    from .expert_policy import load_config

    cfg = load_config(path)
    unknown = set(cfg) - {"expert", "scoring"}
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = getattr(logging, os.environ.get("ODX_LOG", "WARNING").upper(), logging.WARNING)
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    from jsonschema import ValidationError

    from .opendrive_parser import OpenDriveSyntaxError

    try:
        config = _read_config(args.config)
        return args.func(args, config)
    except UsageError as exc:
        print(f"odx: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, OpenDriveSyntaxError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        print(f"odx: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        print(f"odx: invalid scenario: {exc.message}", file=sys.stderr)
        return EXIT_DOMAIN
    except ValueError as exc:
        print(f"odx: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
