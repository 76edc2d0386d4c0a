"""Instruction-following metrics: TL, NE, SR, OS, SPL, nDTW and sDTW.

Paths are compared after arclength resampling to a fixed number of points so
that trajectories logged at different rates are comparable.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import EmptyBatch
from .gridworld import Pose2D

SUCCESS_RADIUS = 3.0
RESAMPLE_POINTS = 100

# Table-2 column order
REPORT_COLUMNS = ("tl", "ne", "os", "sr", "spl", "sdtw", "ndtw")
_PERCENT = ("os", "sr", "spl", "sdtw", "ndtw")
_HEADERS = {
    "tl": "TL (m)",
    "ne": "NE (m)",
    "os": "OS (%)",
    "sr": "SR (%)",
    "spl": "SPL",
    "sdtw": "SDTW",
    "ndtw": "NDTW",
}


class Trajectory:
    """Timestamped pose samples; ``t`` strictly increasing."""

    def __init__(self, times, poses):
        self.times = np.asarray(times, dtype=float).reshape(-1)
        self.poses = np.asarray(poses, dtype=float).reshape(-1, 3)
        if len(self.times) == 0:
            raise ValueError("trajectory needs at least one sample")
        if len(self.times) != len(self.poses):
            raise ValueError("times and poses differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    @classmethod
    def from_points(cls, points, dt=1.0):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        poses = np.column_stack([pts, np.zeros(len(pts))])
        return cls(np.arange(len(pts)) * dt, poses)

    def __len__(self):
        return len(self.times)

    @property
    def positions(self):
        return self.poses[:, :2]

    @property
    def length(self):
        return path_length(self.positions)

    def final_pose(self):
        return Pose2D(*self.poses[-1])

    def to_jsonl(self, events=None):
        events = events or {}
        lines = []
        for i, (t, (x, y, th)) in enumerate(zip(self.times, self.poses)):
            rec = {"t": float(t), "x": float(x), "y": float(y), "theta": float(th)}
            if i in events:
                rec["event"] = events[i]
            lines.append(json.dumps(rec))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text):
        recs = [json.loads(line) for line in text.splitlines() if line.strip()]
        return cls([r["t"] for r in recs], [[r["x"], r["y"], r.get("theta", 0.0)] for r in recs])


def path_length(points):
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        return 0.0
    return float(np.hypot(*np.diff(pts, axis=0).T).sum())


def resample(traj, n=RESAMPLE_POINTS):
    """``n`` points equally spaced by arclength, endpoints kept.

    Accepts a :class:`Trajectory` or an (m, 2) point array. A path of zero
    length collapses to ``n`` copies of its first point.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    pts = traj.positions if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    pts = pts.reshape(-1, 2)
    seg = np.hypot(*np.diff(pts, axis=0).T) if len(pts) > 1 else np.zeros(0)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total == 0.0:
        return np.repeat(pts[:1], n, axis=0)
    # drop zero-length segments so interpolation abscissae stay increasing
    keep = np.concatenate([[True], seg > 0])
    cum, pts = cum[keep], pts[keep]
    s = np.linspace(0.0, total, n)
    out = np.column_stack([np.interp(s, cum, pts[:, 0]), np.interp(s, cum, pts[:, 1])])
    out[0], out[-1] = pts[0], pts[-1]
    return out


def dtw(a, b):
    """Dynamic time warping with Euclidean ground distance.

    Steps (1,0), (0,1), (1,1); both sequences are aligned end to end.
    """
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("dtw needs non-empty sequences")
    cost = np.hypot(a[:, None, 0] - b[None, :, 0], a[:, None, 1] - b[None, :, 1])
    n, m = cost.shape
    acc = np.empty(m)
    acc[:] = np.cumsum(cost[0])
    for i in range(1, n):
        prev = acc
        # best of diagonal and vertical predecessors, then sweep the row
        # left to right for the horizontal predecessor
        diag_up = np.minimum(prev, np.concatenate([[np.inf], prev[:-1]]))
        row = cost[i] + diag_up
        cur = np.empty(m)
        left = np.inf
        ci = cost[i]
        for j in range(m):
            v = row[j]
            alt = ci[j] + left
            if alt < v:
                v = alt
            cur[j] = v
            left = v
        acc = cur
    return float(acc[-1])


def ndtw(query, reference, success_radius=SUCCESS_RADIUS, n=RESAMPLE_POINTS):
    """exp(-DTW / (n_ref * success_radius)) on arclength-resampled paths."""
    q = resample(query, n)
    r = resample(reference, n)
    return math.exp(-dtw(q, r) / (len(r) * success_radius))


@dataclass
class EpisodeResult:
    tl: float
    ne: float
    sr: float
    os: float
    spl: float
    ndtw: float
    sdtw: float
    collision: bool = False
    navigation_failure: bool = False
    episode_id: str = ""

    def to_dict(self):
        return asdict(self)


def evaluate_episode(
    agent_traj,
    reference_path,
    geodesic_length: float,
    success_radius: float = SUCCESS_RADIUS,
    collision: bool = False,
    navigation_failure: bool = False,
    episode_id: str = "",
) -> EpisodeResult:
    """Score one episode against its reference path (goal = last reference point)."""
    if not geodesic_length > 0:
        raise ValueError("geodesic_length must be positive")
    if not isinstance(agent_traj, Trajectory):
        agent_traj = Trajectory.from_points(agent_traj)
    ref = np.asarray(reference_path, dtype=float).reshape(-1, 2)
    if len(ref) == 0:
        raise ValueError("reference path is empty")
    goal = ref[-1]
    pos = agent_traj.positions
    tl = agent_traj.length
    ne = float(np.hypot(*(pos[-1] - goal)))
    sr = 1.0 if ne < success_radius else 0.0
    closest = float(np.min(np.hypot(pos[:, 0] - goal[0], pos[:, 1] - goal[1])))
    os_ = 1.0 if closest < success_radius else 0.0
    spl = sr * geodesic_length / max(tl, geodesic_length)
    nd = ndtw(pos, ref, success_radius)
    return EpisodeResult(
        tl=tl, ne=ne, sr=sr, os=os_, spl=spl, ndtw=nd, sdtw=sr * nd,
        collision=collision, navigation_failure=navigation_failure, episode_id=episode_id,
    )


def aggregate(results):
    """Mean of each metric; SR, OS, SPL, sDTW and nDTW as percentages."""
    results = list(results)
    if not results:
        raise EmptyBatch("cannot aggregate an empty batch")
    summary = {}
    for key in REPORT_COLUMNS:
        mean = float(np.mean([getattr(r, key) for r in results]))
        summary[key] = 100.0 * mean if key in _PERCENT else mean
    summary["episodes"] = len(results)
    summary["collisions"] = int(sum(r.collision for r in results))
    summary["navigation_failures"] = int(sum(r.navigation_failure for r in results))
    return summary


def format_report(rows):
    """Aligned text table; ``rows`` maps a setting label to an aggregate summary."""
    label_w = max([len("Setting")] + [len(k) for k in rows])
    head = "Setting".ljust(label_w) + "".join(_HEADERS[c].rjust(9) for c in REPORT_COLUMNS)
    lines = [head, "-" * len(head)]
    for label, summary in rows.items():
        vals = "".join(f"{summary[c]:9.2f}" if c in ("tl", "ne") else f"{summary[c]:9.1f}"
                       for c in REPORT_COLUMNS)
        lines.append(label.ljust(label_w) + vals)
    return "\n".join(lines)


def report_json(rows):
    return json.dumps(
        {"columns": list(REPORT_COLUMNS), "rows": {k: {c: v[c] for c in (*REPORT_COLUMNS, "episodes")}
                                                    for k, v in rows.items()}},
        indent=2,
    )


def similarity_matrix(settings, success_radius=SUCCESS_RADIUS):
    """Pairwise mean nDTW between experimental settings.

    ``settings`` maps a label to ``{episode_id: trajectory or points}``; each
    cell averages nDTW over the episodes both settings share.
    """
    labels = list(settings)
    k = len(labels)
    mat = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            a, b = settings[labels[i]], settings[labels[j]]
            common = sorted(set(a) & set(b))
            if not common:
                mat[i, j] = mat[j, i] = float("nan")
                continue
            vals = []
            for ep in common:
                pa = a[ep].positions if isinstance(a[ep], Trajectory) else a[ep]
                pb = b[ep].positions if isinstance(b[ep], Trajectory) else b[ep]
                vals.append(ndtw(pa, pb, success_radius))
            mat[i, j] = mat[j, i] = float(np.mean(vals))
    return labels, mat


def format_similarity(labels, mat):
    w = max(len(s) for s in labels) + 2
    lines = ["".ljust(w) + "".join(s.rjust(w) for s in labels)]
    for lab, row in zip(labels, mat):
        lines.append(lab.ljust(w) + "".join(f"{v:.2f}".rjust(w) for v in row))
    return "\n".join(lines)
