"""Episode orchestration for the "with map" and "no map" protocols.

with_map
    The robot snaps to the nearest graph viewpoint (within 0.5 m) and is
    offered that viewpoint's neighbors; the planner drives on the full
    prior map.
no_map
    The belief map starts empty every episode. At each decision the robot
    scans, integrates the scan, bins it into a radial map, predicts
    waypoints and drives on the accumulated map with unknown space
    traversable at a penalty. The graph is only used for reference metrics.

Ground-truth simulator poses are used for metrics; a particle filter can
run alongside and its error is logged.
"""
from __future__ import annotations

import json
import math
import os
import random
from dataclasses import dataclass, field

import numpy as np

from .bridge import DEFAULT_TIMEOUT, BridgeSession
from .errors import BridgeTimeout, InvalidEpisode, InvalidGraph, NoPath, ProtocolError
from .gridworld import OCCUPIED, OccupancyGrid, Pose2D, simulate_scan
from .localization import OdometryDelta, pf_init
from .mapping import LogOddsMap, reset
from .metrics import (SUCCESS_RADIUS, EpisodeResult, Trajectory, aggregate, evaluate_episode, format_report,
                      format_similarity, report_json, similarity_matrix)
from .navgraph import NavGraph, shortest_path
from .planner import (COLLISION, LETHAL, NAVIGATION_FAILURE, PENALTY, DriveConfig, MappingBelief,
                      StaticBelief, drive_to, footprint_collides)
from .subgoal import (MAX_WAYPOINTS, PREFERRED_RANGE, RadialGeometry, WaypointGrid, WaypointSet, bin_scan,
                      extract_waypoints, geometric_predict)

WITH_MAP = "with_map"
NO_MAP = "no_map"
SNAP_RADIUS = 0.5


@dataclass(frozen=True)
class AgentDecision:
    choice: int | None = None
    stop: bool = False

    def __post_init__(self):
        if self.stop == (self.choice is not None):
            raise ValueError("a decision is either a candidate index or stop")

    def validate(self, n_candidates):
        if not self.stop and not 0 <= self.choice < n_candidates:
            raise ValueError(f"choice {self.choice} out of range for {n_candidates} candidates")
        return self

    def to_dict(self):
        return {"stop": True} if self.stop else {"choice": self.choice}

    @classmethod
    def from_dict(cls, d, n_candidates):
        """Parse a bridge response; raises ProtocolError on anything malformed."""
        if not isinstance(d, dict):
            raise ProtocolError("decision must be an object")
        if d.get("stop") is True:
            return cls(stop=True)
        c = d.get("choice")
        if isinstance(c, bool) or not isinstance(c, int):
            raise ProtocolError(f"malformed decision {d!r}")
        if not 0 <= c < n_candidates:
            raise ProtocolError(f"choice {c} out of range for {n_candidates} candidates")
        return cls(choice=c)


@dataclass
class SubgoalParams:
    threshold: float = 0.5
    max_count: int = MAX_WAYPOINTS
    preferred_range: float = PREFERRED_RANGE
    nms_radius: float = 0.75


@dataclass
class EpisodeConfig:
    mode: str = WITH_MAP
    max_decisions: int = 20
    agent: str = "oracle"
    drive: DriveConfig = field(default_factory=DriveConfig)
    subgoal: SubgoalParams = field(default_factory=SubgoalParams)
    predictor: str = "geometric"
    snap_radius: float = SNAP_RADIUS
    success_radius: float = SUCCESS_RADIUS
    track_pose: bool = False
    seed: int = 0
    bridge_timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self):
        if self.max_decisions < 1:
            raise ValueError("max_decisions must be at least 1")
        if self.mode not in (WITH_MAP, NO_MAP):
            raise ValueError(f"mode must be {WITH_MAP!r} or {NO_MAP!r}")


@dataclass
class Observation:
    episode_id: str
    step: int
    instruction: str
    candidates: WaypointSet
    pose: Pose2D

    def to_request(self):
        return {
            "role": "agent",
            "episode_id": self.episode_id,
            "step": self.step,
            "instruction": self.instruction,
            "candidates": self.candidates.to_list(),
            "pose": {"x": self.pose.x, "y": self.pose.y, "theta": self.pose.theta},
        }

    @classmethod
    def from_request(cls, req):
        p = req["pose"]
        return cls(str(req["episode_id"]), int(req["step"]), req.get("instruction", ""),
                   WaypointSet.from_json(req["candidates"]), Pose2D(p["x"], p["y"], p["theta"]))


@dataclass
class EpisodeContext:
    """What an agent may know about the episode before it starts.

    ``reference`` and ``graph`` are privileged and only read by the oracle.
    """
    episode_id: str
    instruction: str
    reference: np.ndarray
    path: tuple
    graph: NavGraph | None = None
    success_radius: float = SUCCESS_RADIUS


# --------------------------------------------------------------------------
# agents


def _nearest_candidate(candidates, target):
    xy = candidates.world_xy()
    d = np.hypot(xy[:, 0] - target[0], xy[:, 1] - target[1])
    return int(np.argmin(d)), float(d.min())


class OracleAgent:
    """Follows the reference path and stops at (or near) the goal."""

    lookahead = 0.5

    def reset(self, ctx: EpisodeContext):
        self.ctx = ctx
        ref = np.asarray(ctx.reference, dtype=float)
        seg = np.hypot(*np.diff(ref, axis=0).T)
        self._cum = np.concatenate([[0.0], np.cumsum(seg)])
        self._progress = 0.0

    def decide(self, obs: Observation) -> AgentDecision:
        if self.ctx.graph is not None:
            return self._decide_graph(obs)
        return self._decide_free(obs)

    def _decide_graph(self, obs):
        g, path = self.ctx.graph, self.ctx.path
        vid, _ = g.nearest(obs.pose.xy)
        if vid == path[-1]:
            return AgentDecision(stop=True)
        if vid in path[:-1]:
            k = len(path) - 2 - list(reversed(path[:-1])).index(vid)
            nxt = path[k + 1]
        else:
            nxt = shortest_path(g, vid, path[-1])[0][1]
        if len(obs.candidates) == 0:
            return AgentDecision(stop=True)
        return AgentDecision(choice=_nearest_candidate(obs.candidates, g.xy(nxt))[0])

    def _progress_along(self, p):
        ref, cum = self.ctx.reference, self._cum
        best_s, best_d = 0.0, math.inf
        for i in range(len(ref) - 1):
            a, b = ref[i], ref[i + 1]
            ab = b - a
            L2 = float(ab @ ab)
            t = 0.0 if L2 == 0 else float(np.clip((p - a) @ ab / L2, 0.0, 1.0))
            d = float(np.hypot(*(a + t * ab - p)))
            if d < best_d:
                best_d, best_s = d, cum[i] + t * (cum[i + 1] - cum[i])
        return best_s

    def _decide_free(self, obs):
        ref = self.ctx.reference
        goal = ref[-1]
        p = np.array([obs.pose.x, obs.pose.y])
        d_goal = float(np.hypot(*(p - goal)))
        self._progress = max(self._progress, self._progress_along(p))
        ahead = np.flatnonzero(self._cum > self._progress + self.lookahead)
        target = ref[ahead[0]] if ahead.size else goal
        if len(obs.candidates) == 0:
            return AgentDecision(stop=True)
        k, _ = _nearest_candidate(obs.candidates, target)
        cand_goal = float(np.hypot(*(obs.candidates.world_xy()[k] - goal)))
        if d_goal < self.ctx.success_radius and cand_goal >= d_goal:
            return AgentDecision(stop=True)
        return AgentDecision(choice=k)


class RandomAgent:
    """Uniform over the candidates plus the stop action."""

    def __init__(self, seed=0):
        self.seed = seed

    def reset(self, ctx: EpisodeContext):
        self._rng = random.Random(f"{self.seed}:{ctx.episode_id}")

    def decide(self, obs: Observation) -> AgentDecision:
        k = self._rng.randrange(len(obs.candidates) + 1)
        return AgentDecision(stop=True) if k == len(obs.candidates) else AgentDecision(choice=k)


class BridgeAgent:
    """Forwards every decision to an external process over the bridge protocol."""

    def __init__(self, endpoint, timeout=DEFAULT_TIMEOUT):
        self.endpoint = endpoint
        self.timeout = timeout
        self.session = None

    def reset(self, ctx: EpisodeContext):
        self.close()
        self.session = BridgeSession.connect(self.endpoint, self.timeout)

    def decide(self, obs: Observation) -> AgentDecision:
        resp = self.session.request(obs.to_request())
        return AgentDecision.from_dict(resp, len(obs.candidates))

    def close(self):
        if self.session is not None:
            self.session.close()
            self.session = None


def make_agent(spec: str, seed=0, timeout=DEFAULT_TIMEOUT):
    """``oracle``, ``random`` / ``random:<seed>`` or ``bridge:<endpoint>``."""
    if spec == "oracle":
        return OracleAgent()
    if spec == "random":
        return RandomAgent(seed)
    if spec.startswith("random:"):
        return RandomAgent(int(spec.split(":", 1)[1]))
    if spec.startswith("bridge:"):
        return BridgeAgent(spec.split(":", 1)[1], timeout)
    raise ValueError(f"unknown agent {spec!r}")


class BridgePredictor:
    """Waypoint grids from an external predictor."""

    def __init__(self, endpoint, timeout=DEFAULT_TIMEOUT):
        self.session = BridgeSession.connect(endpoint, timeout)

    def __call__(self, radial, scan, pose, episode_id, step):
        resp = self.session.request({
            "role": "predictor", "episode_id": episode_id, "step": step,
            "pose": {"x": pose.x, "y": pose.y, "theta": pose.theta}, "scan": scan.to_dict(),
        })
        try:
            grid = WaypointGrid.from_json(resp)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed waypoint grid: {exc}") from None
        if grid.geometry != radial.geometry:
            raise ProtocolError("waypoint grid geometry differs from the radial map")
        return grid

    def close(self):
        self.session.close()


def _geometric(params: SubgoalParams):
    def predict(radial, scan, pose, episode_id, step):
        return geometric_predict(radial, preferred_range=params.preferred_range)
    return predict


# --------------------------------------------------------------------------
# episodes


@dataclass
class EpisodeRun:
    trajectory: Trajectory
    result: EpisodeResult
    decisions: list
    events: dict = field(default_factory=dict)
    pose_log: list = field(default_factory=list)

    def trajectory_jsonl(self):
        return self.trajectory.to_jsonl(self.events)

    def decisions_jsonl(self):
        return "".join(json.dumps(d) + "\n" for d in self.decisions)


class _Recorder:
    """Accumulates the trajectory across drives, and optionally a tracking filter."""

    def __init__(self, world, start: Pose2D, cfg: EpisodeConfig):
        self.times = [0.0]
        self.poses = [start.as_tuple()]
        self.events = {}
        self.pose_log = []
        self.pf = None
        self._last = start
        if cfg.track_pose:
            self.pf = pf_init(world, 300, mode="gaussian", pose=start, sigmas=(0.05, 0.05, 0.02),
                              seed=cfg.seed)

    @property
    def t(self):
        return self.times[-1]

    def mark(self, event):
        i = len(self.times) - 1
        self.events[i] = f"{self.events[i]},{event}" if i in self.events else event

    def add(self, traj: Trajectory):
        self.times.extend(traj.times[1:].tolist())
        self.poses.extend(map(tuple, traj.poses[1:].tolist()))

    def on_scan(self, t, pose, scan):
        if self.pf is None:
            return
        self.pf.step(OdometryDelta.between(self._last, pose), scan)
        self._last = pose
        est = self.pf.estimate()
        self.pose_log.append({"t": float(t), "x": est.x, "y": est.y, "theta": est.theta,
                              "error": math.hypot(est.x - pose.x, est.y - pose.y)})

    def trajectory(self):
        return Trajectory(self.times, self.poses)


def _check_episode(world, graph, episode):
    for vid in episode.path:
        if vid not in graph:
            raise InvalidEpisode(f"episode {episode.episode_id}: viewpoint {vid!r} not in graph")
        if not graph.viewpoints[vid].included:
            raise InvalidEpisode(f"episode {episode.episode_id}: viewpoint {vid!r} is excluded")
    x, y = graph.xy(episode.start)
    start = Pose2D(float(x), float(y), episode.heading)
    if not world.contains(start.x, start.y) or world.value_at(start.x, start.y) == OCCUPIED:
        raise InvalidEpisode(f"episode {episode.episode_id}: start is not free in the world")
    return start


def _context(graph, episode, cfg, privileged_graph):
    ref = np.array([graph.xy(v) for v in episode.path], dtype=float)
    instr = episode.instructions[0] if episode.instructions else ""
    return EpisodeContext(episode.episode_id, instr, ref, tuple(episode.path),
                          graph if privileged_graph else None, cfg.success_radius)


def _finish(rec, ctx, episode, decisions, collision, failure, cfg):
    traj = rec.trajectory()
    result = evaluate_episode(traj, ctx.reference, episode.distance, cfg.success_radius,
                              collision=collision, navigation_failure=failure,
                              episode_id=episode.episode_id)
    return EpisodeRun(traj, result, decisions, rec.events, rec.pose_log)


def _decide(agent, obs, decisions, extra=None):
    try:
        d = agent.decide(obs)
        d.validate(len(obs.candidates))
    except ValueError as exc:
        raise ProtocolError(str(exc)) from None
    entry = {"step": obs.step, "candidates": obs.candidates.to_list(), "decision": d.to_dict()}
    if extra:
        entry.update(extra)
    decisions.append(entry)
    return d


def _drive_leg(world, belief, rec, target, cfg):
    res = drive_to(world, belief, Pose2D(*rec.poses[-1]), target, cfg.drive, t0=rec.t, on_scan=rec.on_scan)
    rec.add(res.trajectory)
    return res


def run_episode_with_map(world: OccupancyGrid, graph: NavGraph, episode, cfg: EpisodeConfig | None = None,
                         agent=None) -> EpisodeRun:
    cfg = cfg or EpisodeConfig(mode=WITH_MAP)
    agent = agent or make_agent(cfg.agent, cfg.seed, cfg.bridge_timeout)
    start = _check_episode(world, graph, episode)
    ctx = _context(graph, episode, cfg, privileged_graph=True)
    agent.reset(ctx)
    belief = StaticBelief(world, robot_radius=cfg.drive.robot_radius, unknown_policy=LETHAL)
    rec = _Recorder(world, start, cfg)
    decisions = []
    collision = failure = False
    try:
        for step in range(cfg.max_decisions):
            pose = Pose2D(*rec.poses[-1])
            vid, dist = graph.nearest(pose.xy)
            if dist > cfg.snap_radius:
                failure = True
                rec.mark(NAVIGATION_FAILURE)
                break
            nbrs = graph.neighbors(vid)
            cands = WaypointSet.from_world_points([graph.xy(n) for n in nbrs], pose)
            obs = Observation(ctx.episode_id, step, ctx.instruction, cands, pose)
            rec.mark(f"decision:{step}")
            d = _decide(agent, obs, decisions, {"viewpoint": vid, "neighbors": nbrs})
            if d.stop:
                rec.mark("stop")
                break
            res = _drive_leg(world, belief, rec, graph.xy(nbrs[d.choice]), cfg)
            if res.outcome == COLLISION:
                collision = True
                rec.mark(COLLISION)
                break
            if res.outcome == NAVIGATION_FAILURE:
                failure = True
                rec.mark(NAVIGATION_FAILURE)
                break
    except BridgeTimeout:
        failure = True
        rec.mark(NAVIGATION_FAILURE)
    finally:
        if hasattr(agent, "close"):
            agent.close()
    return _finish(rec, ctx, episode, decisions, collision, failure, cfg)


def _drop_blocked(ws: WaypointSet, radial):
    """Remove candidates whose radial bin is occupied."""
    g = radial.geometry
    keep = []
    for w in ws:
        h = int(g.heading_bin(w.heading))
        k = int(math.floor(w.range / g.range_step))
        if k < g.n_range and radial.cells[h, k] == OCCUPIED:
            continue
        keep.append(w)
    return WaypointSet(keep, ws.max_count)


def run_episode_no_map(world: OccupancyGrid, episode, graph: NavGraph, cfg: EpisodeConfig | None = None,
                       agent=None, predictor=None) -> EpisodeRun:
    """The graph only supplies the start pose and the reference path for metrics."""
    cfg = cfg or EpisodeConfig(mode=NO_MAP)
    agent = agent or make_agent(cfg.agent, cfg.seed, cfg.bridge_timeout)
    start = _check_episode(world, graph, episode)
    ctx = _context(graph, episode, cfg, privileged_graph=False)
    agent.reset(ctx)
    if predictor is None:
        if cfg.predictor.startswith("bridge:"):
            predictor = BridgePredictor(cfg.predictor.split(":", 1)[1], cfg.bridge_timeout)
        else:
            predictor = _geometric(cfg.subgoal)
    logodds = reset(LogOddsMap.like(world))
    belief = MappingBelief(logodds, robot_radius=cfg.drive.robot_radius, unknown_policy=PENALTY)
    geometry = RadialGeometry()
    rec = _Recorder(world, start, cfg)
    decisions = []
    collision = failure = False
    d = cfg.drive
    try:
        for step in range(cfg.max_decisions):
            pose = Pose2D(*rec.poses[-1])
            scan = simulate_scan(world, pose, d.scan_fov, d.scan_beams, d.scan_range)
            belief.update(pose, scan)
            radial = bin_scan(scan, geometry)
            wgrid = predictor(radial, scan, pose, ctx.episode_id, step)
            ws = extract_waypoints(wgrid, cfg.subgoal.threshold, cfg.subgoal.max_count,
                                   cfg.subgoal.nms_radius, pose=pose)
            ws = _drop_blocked(ws, radial)
            rec.mark(f"decision:{step}")
            if len(ws) == 0:
                decisions.append({"step": step, "candidates": [], "decision": None})
                failure = True
                rec.mark(NAVIGATION_FAILURE)
                break
            obs = Observation(ctx.episode_id, step, ctx.instruction, ws, pose)
            dec = _decide(agent, obs, decisions)
            if dec.stop:
                rec.mark("stop")
                break
            w = ws[dec.choice]
            res = _drive_leg(world, belief, rec, (w.x, w.y), cfg)
            if res.outcome == COLLISION:
                collision = True
                rec.mark(COLLISION)
                break
            if res.outcome == NAVIGATION_FAILURE:
                failure = True
                rec.mark(NAVIGATION_FAILURE)
                break
    except BridgeTimeout:
        failure = True
        rec.mark(NAVIGATION_FAILURE)
    finally:
        if hasattr(agent, "close"):
            agent.close()
        if hasattr(predictor, "close"):
            predictor.close()
    return _finish(rec, ctx, episode, decisions, collision, failure, cfg)


def run_episode(world, graph, episode, cfg: EpisodeConfig, agent=None) -> EpisodeRun:
    if cfg.mode == WITH_MAP:
        return run_episode_with_map(world, graph, episode, cfg, agent)
    return run_episode_no_map(world, episode, graph, cfg, agent)


def run_batch(world, graph, episodes, cfg: EpisodeConfig, agent_factory=None):
    """Run episodes in order; each gets a fresh agent. Returns {episode_id: EpisodeRun}."""
    runs = {}
    for ep in episodes:
        agent = agent_factory() if agent_factory else None
        runs[ep.episode_id] = run_episode(world, graph, ep, cfg, agent)
    return runs


# --------------------------------------------------------------------------
# reports and logs


def batch_report(settings):
    """Table-2 rows and the Table-3 pairwise nDTW matrix for ``{label: runs}``."""
    rows = {label: aggregate([r.result for r in runs.values()]) for label, runs in settings.items()}
    labels, mat = similarity_matrix({label: {k: r.trajectory for k, r in runs.items()}
                                     for label, runs in settings.items()})
    return rows, labels, mat


def write_runs(out_dir, label, runs):
    """trajectories/<id>.jsonl, decisions/<id>.jsonl and results.jsonl under out_dir/label."""
    base = os.path.join(out_dir, label)
    os.makedirs(os.path.join(base, "trajectories"), exist_ok=True)
    os.makedirs(os.path.join(base, "decisions"), exist_ok=True)
    with open(os.path.join(base, "results.jsonl"), "w") as fh:
        for eid, run in runs.items():
            with open(os.path.join(base, "trajectories", f"{eid}.jsonl"), "w") as t:
                t.write(run.trajectory_jsonl())
            with open(os.path.join(base, "decisions", f"{eid}.jsonl"), "w") as t:
                t.write(run.decisions_jsonl())
            if run.pose_log:
                with open(os.path.join(base, "trajectories", f"{eid}.pf.jsonl"), "w") as t:
                    t.write("".join(json.dumps(e) + "\n" for e in run.pose_log))
            fh.write(json.dumps(run.result.to_dict()) + "\n")
    return base


def write_reports(out_dir, settings):
    rows, labels, mat = batch_report(settings)
    os.makedirs(out_dir, exist_ok=True)
    text = format_report(rows) + "\n\nnDTW similarity\n" + format_similarity(labels, mat) + "\n"
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write(text)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        doc = json.loads(report_json(rows))
        doc["similarity"] = {"labels": labels, "matrix": mat.tolist()}
        fh.write(json.dumps(doc, indent=2))
    return text


def agent_handler(make):
    """Bridge server handler: ``make(episode_id)`` returns a reset agent per episode."""
    agents = {}

    def handle(req):
        eid = str(req["episode_id"])
        if eid not in agents or int(req["step"]) == 0:
            agents[eid] = make(eid)
        obs = Observation.from_request(req)
        return agents[eid].decide(obs).to_dict()

    return handle


__all__ = [
    "AgentDecision", "EpisodeConfig", "SubgoalParams", "Observation", "EpisodeContext", "OracleAgent",
    "RandomAgent", "BridgeAgent", "BridgePredictor", "make_agent", "run_episode_with_map",
    "run_episode_no_map", "run_episode", "run_batch", "batch_report", "write_runs", "write_reports",
    "agent_handler", "EpisodeRun", "WITH_MAP", "NO_MAP",
]
