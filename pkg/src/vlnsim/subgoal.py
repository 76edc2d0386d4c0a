"""Subgoal (waypoint) geometry.

A laser scan is binned into a robot-centric range x heading tri-state grid.
A predictor turns that grid into per-bin waypoint probabilities, from which
at most ``max_count`` waypoints are extracted by non-maximum suppression.
Predictions are scored against navigation-graph neighbors with a debiased
Sinkhorn divergence, and by match rates at fixed radii.

Heading bin 0 starts at -pi (robot frame, counterclockwise); range bin ``k``
covers ``[k * dr, (k + 1) * dr)``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

from .errors import InvalidMeasure, OracleScaleExceeded
from .gridworld import FREE, OCCUPIED, UNKNOWN, LaserScan, Pose2D, wrap_angles

N_HEADING = 72
N_RANGE = 32
MAX_RADIUS = 8.0
MAX_WAYPOINTS = 5
PREFERRED_RANGE = 2.1
ROBOT_RADIUS = 0.2


@dataclass
class RadialGeometry:
    n_heading: int = N_HEADING
    n_range: int = N_RANGE
    max_radius: float = MAX_RADIUS

    def __post_init__(self):
        if self.n_heading <= 0 or self.n_range <= 0 or not self.max_radius > 0:
            raise ValueError("radial geometry dimensions must be positive")

    @property
    def heading_step(self):
        return 2.0 * math.pi / self.n_heading

    @property
    def range_step(self):
        return self.max_radius / self.n_range

    def heading_centers(self):
        return -math.pi + (np.arange(self.n_heading) + 0.5) * self.heading_step

    def range_centers(self):
        return (np.arange(self.n_range) + 0.5) * self.range_step

    def centers_xy(self):
        """Bin centers in the robot frame, shape (n_heading, n_range, 2)."""
        th = self.heading_centers()[:, None]
        r = self.range_centers()[None, :]
        return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)

    def heading_bin(self, angle):
        a = wrap_angles(angle)
        return np.clip(np.floor((a + math.pi) / self.heading_step).astype(int), 0, self.n_heading - 1)


@dataclass
class RadialOccupancyMap:
    geometry: RadialGeometry
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.int8)
        if self.cells.shape != (self.geometry.n_heading, self.geometry.n_range):
            raise ValueError("cell array does not match geometry")

    def free_extent(self):
        """Per heading, the number of contiguous free bins starting at the robot."""
        free = self.cells == FREE
        blocked = ~free
        first = np.where(blocked.any(axis=1), blocked.argmax(axis=1), self.geometry.n_range)
        return first


@dataclass
class WaypointGrid:
    geometry: RadialGeometry
    probabilities: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        g = self.geometry
        if self.probabilities.shape != (g.n_heading, g.n_range):
            raise ValueError("probability array does not match geometry")
        if ((self.probabilities < 0) | (self.probabilities > 1)).any():
            raise ValueError("probabilities must lie in [0, 1]")

    @classmethod
    def zeros(cls, geometry=None):
        geometry = geometry or RadialGeometry()
        return cls(geometry, np.zeros((geometry.n_heading, geometry.n_range)))

    def to_json(self):
        g = self.geometry
        return json.dumps(
            {
                "n_heading": g.n_heading,
                "n_range": g.n_range,
                "max_radius": g.max_radius,
                "probabilities": [float(p) for p in self.probabilities.ravel()],
            }
        )

    @classmethod
    def from_json(cls, doc):
        d = json.loads(doc) if isinstance(doc, (str, bytes)) else doc
        g = RadialGeometry(int(d["n_heading"]), int(d["n_range"]), float(d["max_radius"]))
        p = np.asarray(d["probabilities"], dtype=float)
        if p.size != g.n_heading * g.n_range:
            raise ValueError("probability array size does not match header")
        return cls(g, p.reshape(g.n_heading, g.n_range))


@dataclass(frozen=True)
class Waypoint:
    range: float
    heading: float
    x: float
    y: float
    confidence: float

    def to_dict(self):
        return {"range": self.range, "heading": self.heading, "x": self.x, "y": self.y,
                "confidence": self.confidence}


@dataclass
class WaypointSet:
    waypoints: list = field(default_factory=list)
    max_count: int = MAX_WAYPOINTS

    def __post_init__(self):
        if len(self.waypoints) > self.max_count:
            raise ValueError(f"{len(self.waypoints)} waypoints exceed max_count={self.max_count}")

    def __len__(self):
        return len(self.waypoints)

    def __iter__(self):
        return iter(self.waypoints)

    def __getitem__(self, i):
        return self.waypoints[i]

    def world_xy(self):
        return np.array([[w.x, w.y] for w in self.waypoints]).reshape(-1, 2)

    def to_list(self):
        return [w.to_dict() for w in self.waypoints]

    def to_json(self):
        return json.dumps(self.to_list())

    @classmethod
    def from_json(cls, doc, max_count=MAX_WAYPOINTS):
        items = json.loads(doc) if isinstance(doc, (str, bytes)) else doc
        wps = [Waypoint(float(d["range"]), float(d["heading"]), float(d["x"]), float(d["y"]),
                        float(d["confidence"])) for d in items]
        return cls(wps, max(max_count, len(wps)))

    @classmethod
    def from_world_points(cls, points, pose: Pose2D, confidence=1.0, max_count=None):
        """Candidates at known world positions (e.g. graph neighbors)."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        wps = []
        for x, y in pts:
            dx, dy = x - pose.x, y - pose.y
            wps.append(Waypoint(math.hypot(dx, dy), float(wrap_angles(math.atan2(dy, dx) - pose.theta)),
                                float(x), float(y), float(confidence)))
        return cls(wps, max_count if max_count is not None else max(len(wps), MAX_WAYPOINTS))


# --------------------------------------------------------------------------
# scan binning


def _observed_headings(geometry, scan):
    c = geometry.heading_centers()
    lo, hi = scan.angle_min, scan.angle_max
    obs = np.zeros(c.shape, dtype=bool)
    for shift in (-2 * math.pi, 0.0, 2 * math.pi):
        obs |= (c + shift >= lo - 1e-12) & (c + shift <= hi + 1e-12)
    return obs


def heading_ranges(scan: LaserScan, geometry: RadialGeometry):
    """Effective range per heading bin: the nearest beam return in the bin.

    Returns (observed mask, ranges). Bins whose center lies outside the scan
    field of view are unobserved. An observed bin without a beam of its own
    takes the beam closest to its center.
    """
    obs = _observed_headings(geometry, scan)
    ang = scan.angles
    bins = geometry.heading_bin(ang)
    eff = np.full(geometry.n_heading, np.inf)
    np.minimum.at(eff, bins, scan.ranges)
    centers = geometry.heading_centers()
    for h in np.flatnonzero(obs & ~np.isfinite(eff)):
        d = np.abs(wrap_angles(ang - centers[h]))
        eff[h] = scan.ranges[int(np.argmin(d))]
    eff[~obs] = np.nan
    return obs, eff


def bin_scan(scan: LaserScan, geometry: RadialGeometry | None = None) -> RadialOccupancyMap:
    """Radial tri-state map from one scan, in the robot frame.

    Along each observed heading, bins strictly before the return are free, the
    bin holding the return is occupied and bins beyond are unknown. A heading
    without a return is free out to ``min(range_max, max_radius)``.
    """
    g = geometry or RadialGeometry()
    dr = g.range_step
    cells = np.full((g.n_heading, g.n_range), UNKNOWN, dtype=np.int8)
    obs, eff = heading_ranges(scan, g)
    lower = np.arange(g.n_range) * dr
    upper = lower + dr
    for h in np.flatnonzero(obs):
        r = eff[h]
        if r <= scan.range_max:
            k = int(math.floor(r / dr))
            if k >= g.n_range:
                cells[h, :] = FREE
            else:
                cells[h, :k] = FREE
                cells[h, k] = OCCUPIED
        else:
            limit = min(scan.range_max, g.max_radius)
            cells[h, upper <= limit + 1e-12] = FREE
    return RadialOccupancyMap(g, cells)


# --------------------------------------------------------------------------
# geometric baseline predictor


def _valid_runs(valid):
    """Maximal runs of True in a circular boolean array, as lists of indices."""
    n = len(valid)
    if valid.all():
        return [list(range(n))]
    if not valid.any():
        return []
    start = int(np.argmin(valid))  # a False entry: runs never wrap past it
    runs, cur = [], []
    for i in range(1, n + 1):
        j = (start + i) % n
        if valid[j]:
            cur.append(j)
        elif cur:
            runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)
    return runs


def corridor_clear(radial: RadialOccupancyMap, heading: float, distance: float, half_width: float,
                   robot_radius: float = ROBOT_RADIUS):
    """True if no occupied bin lies in the strip swept by a disc of radius
    ``half_width`` moving ``distance`` along ``heading`` (bins inside the
    robot's own footprint are ignored)."""
    g = radial.geometry
    th = g.heading_centers()[:, None]
    r = g.range_centers()[None, :]
    delta = th - heading
    along = r * np.cos(delta)
    across = np.abs(r * np.sin(delta))
    strip = (along >= 0) & (along <= distance + half_width) & (across <= half_width) & (r >= robot_radius)
    return not bool((strip & (radial.cells == OCCUPIED)).any())


def geometric_predict(
    radial: RadialOccupancyMap,
    preferred_range: float = PREFERRED_RANGE,
    robot_radius: float = ROBOT_RADIUS,
    clearance: float = 0.15,
    min_range: float = 0.5,
    sector_spacing: float = math.radians(45.0),
    neighbor_weight: float = 0.6,
) -> WaypointGrid:
    """Rule-based waypoint probabilities from free space alone.

    A heading is usable when its free run reaches ``t + robot_radius +
    clearance`` with ``t = min(preferred_range, free_run - robot_radius -
    clearance) >= min_range`` and the swept corridor of that half width holds
    no occupied bin, i.e. the opening is wider than the robot plus margin on
    both sides. Contiguous usable sectors get one peak per ``sector_spacing``
    of angular width, placed at the most open heading of each sub-sector.
    Peak confidence grows with the free run; the two radial neighbors of a
    peak get ``neighbor_weight`` times that.
    """
    g = radial.geometry
    dr = g.range_step
    half = robot_radius + clearance
    nfree = radial.free_extent()
    free_run = nfree * dr
    target = np.minimum(preferred_range, free_run - half)
    centers = g.heading_centers()
    valid = target >= min_range
    for h in np.flatnonzero(valid):
        valid[h] = corridor_clear(radial, centers[h], target[h], half, robot_radius)

    prob = np.zeros((g.n_heading, g.n_range))
    for run in _valid_runs(valid):
        n_peaks = max(1, int(round(len(run) * g.heading_step / sector_spacing)))
        for sub in np.array_split(np.array(run), n_peaks):
            mid = (len(sub) - 1) / 2.0
            # most open heading; ties go to the sub-sector middle, then lower index
            order = sorted(range(len(sub)), key=lambda i: (-free_run[sub[i]], abs(i - mid), i))
            h = int(sub[order[0]])
            conf = 0.5 + 0.5 * min(free_run[h], g.max_radius) / g.max_radius
            k = int(min(max(round(target[h] / dr - 0.5), 0), nfree[h] - 1))
            prob[h, k] = conf
            for kk in (k - 1, k + 1):
                if 0 <= kk < nfree[h]:
                    prob[h, kk] = max(prob[h, kk], neighbor_weight * conf)
    return WaypointGrid(g, prob)


# --------------------------------------------------------------------------
# waypoint extraction


def extract_waypoints(
    grid: WaypointGrid,
    threshold: float = 0.5,
    max_count: int = MAX_WAYPOINTS,
    nms_radius: float = 0.75,
    pose: Pose2D | None = None,
) -> WaypointSet:
    """Greedy Cartesian non-maximum suppression over bins with ``p >= threshold``.

    Each kept peak absorbs the remaining candidates within ``nms_radius``; the
    waypoint sits at the probability-weighted centroid of that cluster and
    carries the peak's confidence. With ``pose`` the world coordinates are
    filled in, otherwise they equal the robot-frame coordinates.
    """
    p = grid.probabilities.ravel()
    xy = grid.geometry.centers_xy().reshape(-1, 2)
    cand = np.flatnonzero(p >= threshold)
    # descending probability, ties by bin order
    cand = cand[np.lexsort((cand, -p[cand]))]
    remaining = list(cand)
    kept = []
    while remaining and len(kept) < max_count:
        peak = remaining[0]
        d = np.hypot(*(xy[remaining] - xy[peak]).T)
        members = [c for c, dist in zip(remaining, d) if dist <= nms_radius]
        remaining = [c for c, dist in zip(remaining, d) if dist > nms_radius]
        w = p[members]
        c = (xy[members] * w[:, None]).sum(axis=0) / w.sum()
        kept.append((float(p[peak]), c))
    waypoints = []
    for conf, (cx, cy) in kept:
        rng, hd = math.hypot(cx, cy), math.atan2(cy, cx)
        if pose is None:
            wx, wy = cx, cy
        else:
            ct, st = math.cos(pose.theta), math.sin(pose.theta)
            wx, wy = pose.x + ct * cx - st * cy, pose.y + st * cx + ct * cy
        waypoints.append(Waypoint(rng, hd, float(wx), float(wy), conf))
    return WaypointSet(waypoints, max_count)


# --------------------------------------------------------------------------
# optimal transport


@dataclass
class DiscreteMeasure:
    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.masses = np.asarray(self.masses, dtype=float).reshape(-1)
        if len(self.points) != len(self.masses):
            raise InvalidMeasure("points and masses differ in length")
        if len(self.points) == 0:
            raise InvalidMeasure("measure is empty")
        if (self.masses < 0).any() or abs(self.masses.sum() - 1.0) > 1e-9:
            raise InvalidMeasure(f"masses must be non-negative and sum to 1 (sum={self.masses.sum()!r})")

    @classmethod
    def uniform(cls, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(pts) == 0:
            raise InvalidMeasure("measure is empty")
        return cls(pts, np.full(len(pts), 1.0 / len(pts)))

    @classmethod
    def from_waypoint_grid(cls, grid: WaypointGrid, pose: Pose2D | None = None):
        """Renormalize bin probabilities into a measure over bin centers."""
        p = grid.probabilities.ravel()
        xy = grid.geometry.centers_xy().reshape(-1, 2)
        keep = p > 0
        if not keep.any():
            raise InvalidMeasure("waypoint grid has no mass")
        pts = xy[keep]
        if pose is not None:
            ct, st = math.cos(pose.theta), math.sin(pose.theta)
            pts = np.column_stack([pose.x + ct * pts[:, 0] - st * pts[:, 1],
                                   pose.y + st * pts[:, 0] + ct * pts[:, 1]])
        return cls(pts, p[keep] / p[keep].sum())


def _lse(z, axis):
    zmax = z.max(axis=axis, keepdims=True)
    zmax = np.where(np.isfinite(zmax), zmax, 0.0)
    return np.log(np.exp(z - zmax).sum(axis=axis)) + zmax.squeeze(axis)


def squared_distances(x, y):
    return ((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=-1)


_CHECK_EVERY = 5


def entropic_ot(a: DiscreteMeasure, b: DiscreteMeasure, epsilon: float, max_iters: int = 500,
                tol: float = 1e-9, anneal: bool = True):
    """Entropy-regularized OT cost with squared Euclidean ground cost.

    Log-domain Sinkhorn, finished by damped Newton steps on the dual when the
    marginal error is still above ``tol`` and the problem is small. The returned value is the dual objective
    ``<a, f> + <b, g>``, which equals ``<P, C> + eps * KL(P | a x b)`` at the
    fixed point. With ``anneal`` the regularization starts at the largest
    cost and is halved down to ``epsilon``, warm-starting the potentials;
    the coarse stages together use at most half of ``max_iters``.

    Returns (value, info) with keys ``converged``, ``n_iter``,
    ``newton_steps`` and ``err``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    C = squared_distances(a.points, b.points)
    with np.errstate(divide="ignore"):
        loga, logb = np.log(a.masses), np.log(b.masses)
    f = np.zeros(len(a.masses))
    g = np.zeros(len(b.masses))
    schedule = [epsilon]
    if anneal:
        e = float(C.max())
        while e > epsilon:
            schedule.insert(-1, e)
            e *= 0.5
    n_iter, err = 0, np.inf
    # intermediate stages share at most half the budget
    stage_cap = max(_CHECK_EVERY, max_iters // (2 * len(schedule)))
    for stage, eps in enumerate(schedule):
        final = stage == len(schedule) - 1
        stage_tol = tol if final else max(tol, 1e-3)
        stop_at = max_iters if final else min(max_iters, n_iter + stage_cap)
        Ce = C / eps
        err = np.inf  # an earlier stage's error says nothing about this epsilon
        while n_iter < stop_at:
            n_iter += 1
            g = -eps * _lse(f[:, None] / eps - Ce + loga[:, None], axis=0)
            f = -eps * _lse(g[None, :] / eps - Ce + logb[None, :], axis=1)
            if n_iter % _CHECK_EVERY:
                continue
            logP = (f[:, None] + g[None, :]) / eps - Ce + loga[:, None] + logb[None, :]
            err = float(np.abs(np.exp(_lse(logP, axis=0)) - b.masses).sum()
                        + np.abs(np.exp(_lse(logP, axis=1)) - a.masses).sum())
            if err < stage_tol:
                break
    newton_steps = 0
    if not err < tol and len(f) + len(g) <= NEWTON_MAX_POINTS:
        f, g, err, newton_steps = _newton_polish(C, epsilon, loga, logb, a.masses, b.masses, f, g, tol)
    mask_a, mask_b = a.masses > 0, b.masses > 0
    value = float(a.masses[mask_a] @ f[mask_a] + b.masses[mask_b] @ g[mask_b])
    return value, {"converged": err < tol, "n_iter": n_iter, "newton_steps": newton_steps, "err": err}


NEWTON_MAX_POINTS = 600


def _newton_polish(C, eps, loga, logb, wa, wb, f, g, tol, max_steps=50):
    """Damped Newton ascent on the entropic dual, started from Sinkhorn potentials.

    Sinkhorn slows to a crawl on small, nearly degenerate problems at low
    epsilon; a few Newton steps finish them. The last entry of ``g`` is held
    fixed to remove the constant-shift null direction.
    """
    n, m = len(f), len(g)

    def dual(f, g):
        with np.errstate(over="ignore"):
            logP = (f[:, None] + g[None, :] - C) / eps + loga[:, None] + logb[None, :]
            P = np.exp(logP)
        return wa @ np.where(wa > 0, f, 0.0) + wb @ np.where(wb > 0, g, 0.0) - eps * P.sum(), P

    val, P = dual(f, g)
    err = np.inf
    for step in range(max_steps + 1):
        r, c = P.sum(axis=1), P.sum(axis=0)
        err = float(np.abs(r - wa).sum() + np.abs(c - wb).sum())
        if err < tol or step == max_steps:
            break
        H = np.zeros((n + m - 1, n + m - 1))
        H[:n, :n] = np.diag(r)
        H[:n, n:] = P[:, :-1]
        H[n:, :n] = P[:, :-1].T
        H[n:, n:] = np.diag(c[:-1])
        # rows whose mass underflowed would make H singular
        H[np.diag_indices_from(H)] += 1e-13 * max(np.trace(H), 1e-300)
        rhs = eps * np.concatenate([wa - r, (wb - c)[:-1]])
        try:
            d = np.linalg.solve(H, rhs)
        except np.linalg.LinAlgError:
            break
        df, dg = d[:n], np.append(d[n:], 0.0)
        s = 1.0
        while s > 1e-10:
            nv, nP = dual(f + s * df, g + s * dg)
            if np.isfinite(nv) and nv >= val - 1e-15 * abs(val):
                break
            s *= 0.5
        else:
            break
        f, g, val, P = f + s * df, g + s * dg, nv, nP
    return f, g, err, step


def sinkhorn_divergence(a: DiscreteMeasure, b: DiscreteMeasure, epsilon: float = 0.1,
                        max_iters: int = 500, tol: float = 1e-9, log: bool = False):
    """Debiased Sinkhorn divergence ``OT(a,b) - OT(a,a)/2 - OT(b,b)/2``.

    Parameters
    ----------
    a, b : DiscreteMeasure
        Normalized point measures in the plane (meters).
    epsilon : float
        Entropic regularization in m^2.
    max_iters, tol : int, float
        Per-problem iteration budget and marginal (L1) error target.
    log : bool
        If True also return a dict with the three OT terms and a
        ``converged`` flag (False if any of the three solves stopped on the
        iteration budget).
    """
    ab, info_ab = entropic_ot(a, b, epsilon, max_iters, tol)
    aa, info_aa = entropic_ot(a, a, epsilon, max_iters, tol)
    bb, info_bb = entropic_ot(b, b, epsilon, max_iters, tol)
    value = ab - 0.5 * aa - 0.5 * bb
    if log:
        return value, {
            "ot_ab": ab, "ot_aa": aa, "ot_bb": bb,
            "converged": info_ab["converged"] and info_aa["converged"] and info_bb["converged"],
            "n_iter": info_ab["n_iter"] + info_aa["n_iter"] + info_bb["n_iter"],
        }
    return value


ORACLE_MAX_POINTS = 10


def exact_emd(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    """Exact optimal transport cost (squared Euclidean) for small measures.

    Equal-size uniform measures reduce to an assignment problem; anything
    else is solved as the transportation LP.
    """
    n, m = len(a.masses), len(b.masses)
    if n > ORACLE_MAX_POINTS or m > ORACLE_MAX_POINTS:
        raise OracleScaleExceeded(f"exact_emd supports up to {ORACLE_MAX_POINTS} points per side")
    C = squared_distances(a.points, b.points)
    if n == m and np.allclose(a.masses, 1.0 / n) and np.allclose(b.masses, 1.0 / m):
        rows, cols = linear_sum_assignment(C)
        return float(C[rows, cols].sum() / n)
    A_eq = np.zeros((n + m, n * m))
    for i in range(n):
        A_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A_eq[n + j, j::m] = 1.0
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a.masses, b.masses]),
                  bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def permutation_emd(a_points, b_points):
    """Brute-force assignment cost for equal-size uniform measures."""
    a_points = np.asarray(a_points, dtype=float)
    b_points = np.asarray(b_points, dtype=float)
    C = squared_distances(a_points, b_points)
    n = len(a_points)
    best = min(sum(C[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))
    return float(best / n)


# --------------------------------------------------------------------------
# evaluation


def match_eval(predicted, ground_truth, radii=(0.5, 1.0, 1.5)):
    """Fraction of predicted waypoints whose nearest ground-truth point is within each radius."""
    pred = predicted.world_xy() if isinstance(predicted, WaypointSet) else np.asarray(predicted, float)
    pred = pred.reshape(-1, 2)
    gt = np.asarray(ground_truth, dtype=float).reshape(-1, 2)
    if len(pred) == 0 or len(gt) == 0:
        return [0.0 for _ in radii]
    nearest = np.sqrt(squared_distances(pred, gt)).min(axis=1)
    return [float(np.mean(nearest <= r)) for r in radii]


def neighbor_measure(graph, viewpoint_id, excluded=()):
    """Uniform measure over a viewpoint's graph neighbors, skipping ``excluded`` ids
    (e.g. neighbors reached only across stairs)."""
    ids = [v for v in graph.neighbors(viewpoint_id) if v not in set(excluded)]
    if not ids:
        raise InvalidMeasure(f"viewpoint {viewpoint_id!r} has no usable neighbors")
    return DiscreteMeasure.uniform([graph.xy(v) for v in ids])
