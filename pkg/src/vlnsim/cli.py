"""Command-line entry point (``vlnsim`` / ``python3 -m vlnsim``).

Exit codes: 0 success, 1 usage or runtime error, 2 format error, 3 the
episode batch contained failures (the report is still written).

Wherever a map is expected, ``synthetic:<name>`` selects a built-in world
(office, room, corridor, localization, gap) instead of a YAML file.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from .errors import DatasetFormatError, InvalidGraph, MapFormatError, ProtocolError, VLNSimError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FORMAT = 2
EXIT_FAILURES = 3


def _floats(text, n=None):
    vals = [float(v) for v in text.split(",")]
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
    return vals


def _pose(text):
    from .gridworld import Pose2D

    return Pose2D(*_floats(text, 3))


def _load_world(spec):
    from . import worlds
    from .gridworld import read_map

    if spec.startswith("synthetic:"):
        name = spec.split(":", 1)[1]
        builders = {
            "office": lambda: worlds.office_world()[0],
            "room": worlds.open_room,
            "corridor": worlds.corridor,
            "localization": worlds.localization_room,
            "gap": worlds.wall_with_gap,
        }
        if name not in builders:
            raise SystemExit(f"unknown synthetic world {name!r}")
        return builders[name]()
    return read_map(spec)


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_text(path, text):
    if path in (None, "-"):
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
        return
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _load_graph(path, max_edge=5.0):
    from .navgraph import load_graph

    with open(path, encoding="utf-8") as fh:
        return load_graph(fh.read(), max_edge)


# --------------------------------------------------------------------------
# commands


def cmd_graph_build(args):
    from . import worlds
    from .navgraph import parse_graph_records

    world = _load_world(args.world)
    if args.viewpoints:
        vps, _ = parse_graph_records(_read_json(args.viewpoints))
    elif args.world == "synthetic:office":
        vps = worlds.office_world()[1]
    else:
        raise SystemExit("--viewpoints is required unless --world is synthetic:office")
    graph = worlds.graph_for(world, vps, args.max_edge, args.clearance)
    _write_text(args.out, graph.dumps())
    return EXIT_OK


def cmd_graph_stats(args):
    from .navgraph import graph_stats

    stats = graph_stats(_load_graph(args.graph, args.max_edge))
    _write_text(args.out, json.dumps(stats.__dict__, indent=2))
    return EXIT_OK


def cmd_sample_paths(args):
    from .dataset import episodes_from_samples, save_dataset
    from .navgraph import sample_trajectories

    graph = _load_graph(args.graph)
    samples = sample_trajectories(graph, args.n, args.min_length, (args.min_edges, args.max_edges), args.seed)
    eps = episodes_from_samples(samples, graph, args.scan, instructions=[""])
    _write_text(args.out, save_dataset(eps, indent=2))
    return EXIT_OK


def cmd_map_convert(args):
    from .gridworld import write_map

    write_map(_load_world(args.input), args.out)
    return EXIT_OK


def cmd_scan_simulate(args):
    from .gridworld import simulate_scan

    world = _load_world(args.world)
    scan = simulate_scan(world, args.pose, math.radians(args.fov), args.beams, args.range_max,
                         args.noise, args.seed)
    _write_text(args.out, json.dumps(scan.to_dict()))
    return EXIT_OK


def cmd_subgoal_predict(args):
    from .gridworld import LaserScan
    from .subgoal import bin_scan, extract_waypoints, geometric_predict

    scan = LaserScan.from_dict(_read_json(args.scan))
    grid = geometric_predict(bin_scan(scan), preferred_range=args.preferred_range)
    ws = extract_waypoints(grid, args.threshold, args.max_count, pose=scan.pose)
    doc = {"waypoint_grid": json.loads(grid.to_json()), "waypoints": ws.to_list()}
    _write_text(args.out, json.dumps(doc))
    return EXIT_OK


def _waypoint_points(doc):
    if isinstance(doc, dict) and "waypoints" in doc:
        doc = doc["waypoints"]
    if doc and isinstance(doc[0], dict):
        return np.array([[d["x"], d["y"]] for d in doc], dtype=float).reshape(-1, 2)
    return np.asarray(doc, dtype=float).reshape(-1, 2)


def cmd_subgoal_eval(args):
    from .subgoal import DiscreteMeasure, match_eval, neighbor_measure, sinkhorn_divergence

    pred = _waypoint_points(_read_json(args.pred))
    graph = _load_graph(args.graph)
    gt = neighbor_measure(graph, args.viewpoint, args.exclude or ())
    radii = tuple(args.radii)
    out = {"match": dict(zip([str(r) for r in radii], match_eval(pred, gt.points, radii)))}
    if len(pred):
        out["sinkhorn"] = sinkhorn_divergence(DiscreteMeasure.uniform(pred), gt, args.epsilon)
    _write_text(args.out, json.dumps(out, indent=2))
    return EXIT_OK


def cmd_subgoal_sinkhorn(args):
    from .subgoal import DiscreteMeasure, sinkhorn_divergence

    def measure(path):
        doc = _read_json(path)
        if isinstance(doc, dict) and "points" in doc:
            return DiscreteMeasure(np.asarray(doc["points"], float), np.asarray(doc["masses"], float))
        return DiscreteMeasure.uniform(_waypoint_points(doc))

    value, info = sinkhorn_divergence(measure(args.a), measure(args.b), args.epsilon, args.max_iters, log=True)
    _write_text(args.out, json.dumps({"divergence": value, **info}, indent=2))
    return EXIT_OK


def cmd_pf_track(args):
    from .gridworld import Pose2D, simulate_scan
    from .localization import OdometryDelta, pf_init, pose_log_line
    from .metrics import Trajectory

    world = _load_world(args.world)
    with open(args.trajectory, encoding="utf-8") as fh:
        truth = Trajectory.from_jsonl(fh.read())
    poses = [Pose2D(*p) for p in truth.poses]
    if args.global_init:
        pf = pf_init(world, args.particles, "uniform_free", seed=args.seed,
                     n_init=args.initial_particles or 10 * args.particles)
    else:
        pf = pf_init(world, args.particles, "gaussian", pose=poses[0], sigmas=(0.1, 0.1, 0.05), seed=args.seed)
    rng = np.random.default_rng(args.seed + 1)
    lines = [pose_log_line(truth.times[0], pf.estimate(), True)]
    for t, a, b in zip(truth.times[1:], poses[:-1], poses[1:]):
        scan = simulate_scan(world, b, noise_sigma=args.noise, rng=rng)
        pf.step(OdometryDelta.between(a, b), scan)
        lines.append(pose_log_line(t, pf.estimate(), True))
    _write_text(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_plan(args):
    from .planner import DriveConfig, StaticBelief, build_costmap, drive_to, plan_path

    world = _load_world(args.world)
    if args.drive:
        res = drive_to(world, StaticBelief(world), args.start, args.goal, DriveConfig())
        _write_text(args.out, res.trajectory.to_jsonl({len(res.trajectory) - 1: res.outcome}))
        return EXIT_OK if res.outcome == "reached" else EXIT_FAILURES
    path = plan_path(build_costmap(world), args.start, args.goal)
    _write_text(args.out, json.dumps([list(p) for p in path]))
    return EXIT_OK


def cmd_run(args):
    from .dataset import read_dataset
    from .runner import NO_MAP, WITH_MAP, EpisodeConfig, run_batch, write_reports, write_runs

    world = _load_world(args.world)
    graph = _load_graph(args.graph)
    episodes = read_dataset(args.dataset)
    mode = WITH_MAP if args.mode == "with-map" else NO_MAP
    cfg = EpisodeConfig(mode=mode, agent=args.agent, seed=args.seed, max_decisions=args.max_decisions,
                        track_pose=args.track_pose, predictor=args.predictor)
    runs = run_batch(world, graph, episodes, cfg)
    label = args.mode
    write_runs(args.out, label, runs)
    settings = {label: runs}
    for extra in args.compare or ():
        settings[os.path.basename(os.path.normpath(extra))] = _runs_from_dir(extra, episodes, graph)
    text = write_reports(args.out, settings)
    sys.stdout.write(text)
    failed = any(r.result.collision or r.result.navigation_failure for r in runs.values())
    return EXIT_FAILURES if failed else EXIT_OK


def _trajectories_in(path):
    from .metrics import Trajectory

    trajs = {}
    if os.path.isdir(path):
        sub = os.path.join(path, "trajectories")
        root = sub if os.path.isdir(sub) else path
        for name in sorted(os.listdir(root)):
            if name.endswith(".jsonl") and not name.endswith(".pf.jsonl"):
                with open(os.path.join(root, name), encoding="utf-8") as fh:
                    trajs[name[:-6]] = Trajectory.from_jsonl(fh.read())
    else:
        # one JSON object per line: {"episode_id": ..., "trajectory": [[x, y] or {x, y, ...}, ...]}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                pts = rec["trajectory"]
                if pts and isinstance(pts[0], dict):
                    pts = [[p["x"], p["y"]] for p in pts]
                trajs[str(rec["episode_id"])] = Trajectory.from_points(pts)
    return trajs


def _runs_from_dir(path, episodes, graph):
    from .metrics import evaluate_episode
    from .runner import EpisodeRun

    trajs = _trajectories_in(path)
    runs = {}
    for ep in episodes:
        if ep.episode_id in trajs:
            ref = [graph.xy(v) for v in ep.path]
            res = evaluate_episode(trajs[ep.episode_id], ref, ep.distance, episode_id=ep.episode_id)
            runs[ep.episode_id] = EpisodeRun(trajs[ep.episode_id], res, [])
    return runs


def cmd_eval(args):
    from .dataset import read_dataset
    from .metrics import aggregate, format_report, report_json

    episodes = read_dataset(args.dataset)
    graph = _load_graph(args.graph)
    runs = _runs_from_dir(args.pred, episodes, graph)
    missing = [ep.episode_id for ep in episodes if ep.episode_id not in runs]
    if missing:
        print(f"warning: no trajectory for {len(missing)} episode(s)", file=sys.stderr)
    rows = {args.label: aggregate([r.result for r in runs.values()])}
    sys.stdout.write(format_report(rows) + "\n")
    if args.out:
        _write_text(args.out, report_json(rows))
    return EXIT_OK


def cmd_jitter(args):
    from .augment import JitterFactors, color_jitter, read_image, write_image

    img = read_image(args.image)
    factors = JitterFactors(args.brightness, args.contrast, args.saturation, args.hue)
    out = color_jitter(img, factors, args.seed)
    dest = args.out or os.path.splitext(args.image)[0] + f".jitter{args.seed}.png"
    write_image(out, dest)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="vlnsim", description="2D navigation simulator and VLN evaluation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("graph", help="navigation graph tools")
    gsub = g.add_subparsers(dest="graph_command", required=True)
    gb = gsub.add_parser("build", help="visibility graph over viewpoints in a world")
    gb.add_argument("--world", required=True)
    gb.add_argument("--viewpoints", help="graph-format records (poses only are used)")
    gb.add_argument("--max-edge", type=float, default=5.0)
    gb.add_argument("--clearance", type=float, default=0.3)
    gb.add_argument("--out")
    gb.set_defaults(func=cmd_graph_build)
    gs = gsub.add_parser("stats", help="viewpoint count, average degree and edge length")
    gs.add_argument("--graph", required=True)
    gs.add_argument("--max-edge", type=float, default=5.0)
    gs.add_argument("--out")
    gs.set_defaults(func=cmd_graph_stats)

    sp = sub.add_parser("sample-paths", help="shortest-path episodes from a graph")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--n", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--min-length", type=float, default=5.0)
    sp.add_argument("--min-edges", type=int, default=4)
    sp.add_argument("--max-edges", type=int, default=6)
    sp.add_argument("--scan", default="world")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_sample_paths)

    m = sub.add_parser("map", help="occupancy map tools")
    msub = m.add_subparsers(dest="map_command", required=True)
    mc = msub.add_parser("convert", help="rewrite a map (or synthetic world) as PGM + YAML")
    mc.add_argument("--in", dest="input", required=True)
    mc.add_argument("--out", required=True, help="output YAML path; the PGM is written beside it")
    mc.set_defaults(func=cmd_map_convert)

    s = sub.add_parser("scan", help="laser scan tools")
    ssub = s.add_subparsers(dest="scan_command", required=True)
    ss = ssub.add_parser("simulate", help="simulate one scan")
    ss.add_argument("--world", required=True)
    ss.add_argument("--pose", type=_pose, required=True, help="x,y,theta")
    ss.add_argument("--fov", type=float, default=270.0, help="degrees")
    ss.add_argument("--beams", type=int, default=541)
    ss.add_argument("--range-max", type=float, default=30.0)
    ss.add_argument("--noise", type=float, default=0.0)
    ss.add_argument("--seed", type=int, default=0)
    ss.add_argument("--out")
    ss.set_defaults(func=cmd_scan_simulate)

    sg = sub.add_parser("subgoal", help="waypoint prediction and scoring")
    sgsub = sg.add_subparsers(dest="subgoal_command", required=True)
    sgp = sgsub.add_parser("predict", help="geometric waypoints from a scan file")
    sgp.add_argument("--scan", required=True)
    sgp.add_argument("--threshold", type=float, default=0.5)
    sgp.add_argument("--max-count", type=int, default=5)
    sgp.add_argument("--preferred-range", type=float, default=2.1)
    sgp.add_argument("--out")
    sgp.set_defaults(func=cmd_subgoal_predict)
    sge = sgsub.add_parser("eval", help="match rates and Sinkhorn divergence against graph neighbors")
    sge.add_argument("--pred", required=True)
    sge.add_argument("--graph", required=True)
    sge.add_argument("--viewpoint", required=True)
    sge.add_argument("--exclude", nargs="*")
    sge.add_argument("--radii", type=float, nargs="+", default=[0.5, 1.0, 1.5])
    sge.add_argument("--epsilon", type=float, default=0.1)
    sge.add_argument("--out")
    sge.set_defaults(func=cmd_subgoal_eval)
    sgs = sgsub.add_parser("sinkhorn", help="Sinkhorn divergence between two point sets")
    sgs.add_argument("--a", required=True)
    sgs.add_argument("--b", required=True)
    sgs.add_argument("--epsilon", type=float, default=0.1)
    sgs.add_argument("--max-iters", type=int, default=500)
    sgs.add_argument("--out")
    sgs.set_defaults(func=cmd_subgoal_sinkhorn)

    pf = sub.add_parser("pf", help="particle filter tools")
    pfsub = pf.add_subparsers(dest="pf_command", required=True)
    pft = pfsub.add_parser("track", help="track a ground-truth trajectory from simulated scans")
    pft.add_argument("--world", required=True)
    pft.add_argument("--trajectory", required=True, help="trajectory JSONL")
    pft.add_argument("--particles", type=int, default=500)
    pft.add_argument("--noise", type=float, default=0.01)
    pft.add_argument("--global-init", action="store_true")
    pft.add_argument("--initial-particles", type=int, default=None,
                     help="size of the first global sweep (default 10x --particles)")
    pft.add_argument("--seed", type=int, default=0)
    pft.add_argument("--out")
    pft.set_defaults(func=cmd_pf_track)

    pl = sub.add_parser("plan", help="plan (or drive) from start to goal on a map")
    pl.add_argument("--world", required=True)
    pl.add_argument("--start", type=_pose, required=True, help="x,y,theta")
    pl.add_argument("--goal", type=lambda t: _floats(t, 2), required=True, help="x,y")
    pl.add_argument("--drive", action="store_true", help="execute and emit the trajectory JSONL")
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plan)

    r = sub.add_parser("run", help="run an episode batch")
    r.add_argument("--mode", choices=["with-map", "no-map"], required=True)
    r.add_argument("--agent", default="oracle", help="oracle | random | bridge:<endpoint>")
    r.add_argument("--predictor", default="geometric", help="geometric | bridge:<endpoint> (no-map only)")
    r.add_argument("--dataset", required=True)
    r.add_argument("--world", required=True)
    r.add_argument("--graph", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--max-decisions", type=int, default=20)
    r.add_argument("--track-pose", action="store_true", help="run the particle filter alongside")
    r.add_argument("--compare", nargs="*", help="earlier output dirs to include in the nDTW matrix")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="score trajectories against a dataset")
    e.add_argument("--pred", required=True, help="directory of <episode_id>.jsonl or a JSONL file")
    e.add_argument("--dataset", required=True)
    e.add_argument("--graph", required=True)
    e.add_argument("--label", default="pred")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    j = sub.add_parser("jitter", help="color-jitter an image")
    j.add_argument("--image", required=True)
    j.add_argument("--seed", type=int, default=0)
    j.add_argument("--brightness", type=float, default=0.3)
    j.add_argument("--contrast", type=float, default=0.3)
    j.add_argument("--saturation", type=float, default=0.3)
    j.add_argument("--hue", type=float, default=0.01)
    j.add_argument("--out")
    j.set_defaults(func=cmd_jitter)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (MapFormatError, DatasetFormatError, InvalidGraph, ProtocolError, json.JSONDecodeError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (VLNSimError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
