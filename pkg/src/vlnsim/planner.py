"""Costmaps, A* global planning and closed-loop waypoint execution.

The robot is a disc (radius 0.20 m by default) driven as a unicycle with a
pure-pursuit controller. During execution every control tick simulates a
scan against the true world, feeds it to the robot's belief, and replans
when the current path becomes blocked.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import NoPath
from .gridworld import OCCUPIED, UNKNOWN, OccupancyGrid, Pose2D, simulate_scan, wrap_angle
from .mapping import LogOddsMap, export_grid, integrate_scan
from .metrics import Trajectory

ROBOT_RADIUS = 0.20
INFLATION_RADIUS = 0.25
# cost just outside the lethal core is 1 + INFLATED_COST, decaying with distance
INFLATED_COST = 20.0
COST_DECAY = 12.0  # 1/m
SQRT2 = math.sqrt(2.0)

LETHAL = "lethal"
PENALTY = "penalty"


class Costmap:
    """Per-cell traversal cost; ``inf`` marks lethal cells."""

    def __init__(self, base: OccupancyGrid, cost, robot_radius, inflation_radius, unknown_policy,
                 unknown_multiplier):
        self.base = base
        self.cost = cost
        self.robot_radius = robot_radius
        self.inflation_radius = inflation_radius
        self.unknown_policy = unknown_policy
        self.unknown_multiplier = unknown_multiplier

    @property
    def lethal(self):
        return np.isinf(self.cost)

    @property
    def resolution(self):
        return self.base.resolution

    @property
    def shape(self):
        return self.cost.shape

    def cell(self, x, y):
        ix, iy = self.base.world_to_cell(x, y)
        return int(iy), int(ix)

    def is_lethal_xy(self, x, y):
        r, c = self.cell(x, y)
        if not (0 <= r < self.shape[0] and 0 <= c < self.shape[1]):
            return True
        return bool(np.isinf(self.cost[r, c]))

    def center(self, rc):
        x, y = self.base.cell_to_world(rc[1], rc[0])
        return float(x), float(y)


def build_costmap(grid: OccupancyGrid, robot_radius=ROBOT_RADIUS, inflation_radius=INFLATION_RADIUS,
                  unknown_policy=LETHAL, unknown_multiplier=2.0) -> Costmap:
    """Lethal core = obstacles dilated by ``robot_radius`` (cell-center distance);
    an exponentially decaying band of width ``inflation_radius`` surrounds it.

    Under the ``"lethal"`` policy unknown cells count as obstacles; under
    ``"penalty"`` they stay traversable with cost multiplied by
    ``unknown_multiplier``.
    """
    if unknown_policy not in (LETHAL, PENALTY):
        raise ValueError(f"unknown_policy must be {LETHAL!r} or {PENALTY!r}")
    obstacles = grid.cells == OCCUPIED
    unknown = grid.cells == UNKNOWN
    if unknown_policy == LETHAL:
        obstacles = obstacles | unknown
    if obstacles.any():
        dist = ndimage.distance_transform_edt(~obstacles) * grid.resolution
    else:
        dist = np.full(grid.shape, np.inf)
    cost = np.ones(grid.shape)
    band = (dist > robot_radius) & (dist <= robot_radius + inflation_radius)
    cost[band] = 1.0 + INFLATED_COST * np.exp(-COST_DECAY * (dist[band] - robot_radius))
    cost[dist <= robot_radius + 1e-9] = np.inf
    if unknown_policy == PENALTY:
        pen = unknown & np.isfinite(cost)
        cost[pen] *= unknown_multiplier
    return Costmap(grid, cost, robot_radius, inflation_radius, unknown_policy, unknown_multiplier)


# --------------------------------------------------------------------------
# A*

_MOVES = [(-1, 0, 1.0), (1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0),
          (-1, -1, SQRT2), (-1, 1, SQRT2), (1, -1, SQRT2), (1, 1, SQRT2)]


def astar(costmap: Costmap, start, goal):
    """8-connected A* between (row, col) cells.

    Moving into a cell costs step length (1 or sqrt 2) times that cell's
    cost; diagonal moves may not cut past a lethal orthogonal neighbor.
    Returns (cells, total_cost). Raises NoPath.
    """
    h, w = costmap.shape
    cost = costmap.cost
    for name, (r, c) in (("start", start), ("goal", goal)):
        if not (0 <= r < h and 0 <= c < w) or math.isinf(cost[r, c]):
            raise NoPath(f"{name} cell {(r, c)} is lethal or outside the map")
    flat = cost.ravel().tolist()
    s, g = start[0] * w + start[1], goal[0] * w + goal[1]
    gr, gc = goal
    best = {s: 0.0}
    parent = {s: -1}
    closed = set()
    heap = [(0.0, 0.0, s)]
    inf = math.inf
    while heap:
        _, gs, u = heapq.heappop(heap)
        if u in closed:
            continue
        if u == g:
            break
        closed.add(u)
        ur, uc = divmod(u, w)
        for dr, dc, step in _MOVES:
            vr, vc = ur + dr, uc + dc
            if vr < 0 or vr >= h or vc < 0 or vc >= w:
                continue
            v = vr * w + vc
            cv = flat[v]
            if cv == inf or v in closed:
                continue
            if dr and dc and (flat[ur * w + vc] == inf or flat[vr * w + uc] == inf):
                continue
            ng = gs + step * cv
            if ng < best.get(v, inf):
                best[v] = ng
                parent[v] = u
                ar, ac = abs(vr - gr), abs(vc - gc)
                hv = (ar + ac) + (SQRT2 - 2.0) * min(ar, ac)
                heapq.heappush(heap, (ng + hv, ng, v))
    if g not in parent:
        raise NoPath(f"goal cell {goal} unreachable from {start}")
    cells = []
    u = g
    while u != -1:
        cells.append(divmod(u, w))
        u = parent[u]
    cells.reverse()
    return cells, best[g]


def line_cells(a, b):
    """Grid cells (row, col) crossed by the segment between two cell centers."""
    (r0, c0), (r1, c1) = a, b
    dr, dc = r1 - r0, c1 - c0
    n_r, n_c = abs(dr), abs(dc)
    sr = 1 if dr > 0 else -1
    sc = 1 if dc > 0 else -1
    r, c = r0, c0
    out = [(r, c)]
    ir = ic = 0
    while ir < n_r or ic < n_c:
        # compare the parameters of the next row and column crossings
        lhs = (0.5 + ic) * n_r
        rhs = (0.5 + ir) * n_c
        if lhs == rhs:
            # exact corner: include both side cells so the line cannot slip between them
            out.append((r + sr, c))
            out.append((r, c + sc))
            r += sr
            c += sc
            ir += 1
            ic += 1
        elif lhs < rhs:
            c += sc
            ic += 1
        else:
            r += sr
            ir += 1
        out.append((r, c))
    return out


def smooth_path(costmap: Costmap, cells):
    """Greedy line-of-sight shortcutting.

    From each anchor the path jumps to the farthest later cell reachable in
    a straight line over non-lethal cells, provided the line's worst cell
    cost does not exceed the worst cost of the section it replaces (so
    shortcuts never pull the path closer to obstacles than A* went).
    """
    if len(cells) <= 2:
        return list(cells)
    cost = costmap.cost
    out = [cells[0]]
    i = 0
    n = len(cells)
    while i < n - 1:
        j = i + 1
        seg_max = max(cost[cells[i]], cost[cells[j]])
        while j + 1 < n:
            cand_max = max(seg_max, cost[cells[j + 1]])
            line = line_cells(cells[i], cells[j + 1])
            line_cost = max(cost[rc] for rc in line)
            if math.isinf(line_cost) or line_cost > cand_max + 1e-12:
                break
            j += 1
            seg_max = cand_max
        out.append(cells[j])
        i = j
    return out


def plan_path(costmap: Costmap, start: Pose2D, goal, smooth=True):
    """Minimum-cost path from ``start`` to the 2-vector ``goal`` as world points.

    The first point is the start position itself, the last the goal.
    """
    sc = costmap.cell(start.x, start.y)
    gc = costmap.cell(goal[0], goal[1])
    cells, _ = astar(costmap, sc, gc)
    if smooth:
        cells = smooth_path(costmap, cells)
    pts = [costmap.center(rc) for rc in cells]
    pts[0] = (start.x, start.y)
    pts[-1] = (float(goal[0]), float(goal[1]))
    return pts


# --------------------------------------------------------------------------
# beliefs


class StaticBelief:
    """A prior map; scan returns landing in free prior cells are added as obstacles."""

    def __init__(self, grid: OccupancyGrid, robot_radius=ROBOT_RADIUS, inflation_radius=INFLATION_RADIUS,
                 unknown_policy=LETHAL, unknown_multiplier=2.0):
        self.grid = grid
        self._cells = np.array(grid.cells)
        self.params = dict(robot_radius=robot_radius, inflation_radius=inflation_radius,
                           unknown_policy=unknown_policy, unknown_multiplier=unknown_multiplier)
        self._costmap = None

    def update(self, pose, scan):
        """Returns the (rows, cols) of newly marked obstacle cells."""
        hit = scan.returns()
        if not hit.any():
            return np.zeros(0, int), np.zeros(0, int)
        # nudge endpoints into the cell that was hit
        a = scan.angles[hit] + pose.theta
        r = scan.ranges[hit] + 1e-6
        ix, iy = self.grid.world_to_cell(pose.x + r * np.cos(a), pose.y + r * np.sin(a))
        ok = self.grid.in_bounds(ix, iy)
        ix, iy = ix[ok], iy[ok]
        new = self._cells[iy, ix] != OCCUPIED
        if not new.any():
            return np.zeros(0, int), np.zeros(0, int)
        self._cells[iy[new], ix[new]] = OCCUPIED
        self._costmap = None
        return iy[new], ix[new]

    def costmap(self):
        if self._costmap is None:
            self._costmap = build_costmap(self.grid.with_cells(self._cells), **self.params)
        return self._costmap


class MappingBelief:
    """Belief built only from scans: a log-odds map exported to a costmap."""

    def __init__(self, logodds: LogOddsMap, robot_radius=ROBOT_RADIUS, inflation_radius=INFLATION_RADIUS,
                 unknown_policy=PENALTY, unknown_multiplier=2.0, occ_threshold=2.0, free_threshold=-2.0):
        self.map = logodds
        self.params = dict(robot_radius=robot_radius, inflation_radius=inflation_radius,
                           unknown_policy=unknown_policy, unknown_multiplier=unknown_multiplier)
        self.thresholds = (occ_threshold, free_threshold)
        self._grid = export_grid(logodds, *self.thresholds)
        self._costmap = None

    def update(self, pose, scan):
        integrate_scan(self.map, pose, scan)
        grid = export_grid(self.map, *self.thresholds)
        changed = grid.cells != self._grid.cells
        self._grid = grid
        if changed.any():
            self._costmap = None
        newly = changed & (grid.cells == OCCUPIED)
        return np.nonzero(newly)

    def grid(self):
        return self._grid

    def costmap(self):
        if self._costmap is None:
            self._costmap = build_costmap(self._grid, **self.params)
        return self._costmap


# --------------------------------------------------------------------------
# execution


@dataclass
class DriveConfig:
    max_speed: float = 0.5
    control_dt: float = 0.1
    lookahead: float = 0.5
    goal_tolerance: float = 0.25
    step_budget: int = 2000
    max_angular_speed: float = 1.5
    robot_radius: float = ROBOT_RADIUS
    replan_patience: int = 10
    scan_fov: float = math.radians(270.0)
    scan_beams: int = 541
    scan_range: float = 30.0

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not v > 0:
                raise ValueError(f"DriveConfig.{k} must be positive")


REACHED = "reached"
# bearing error above which the robot turns on the spot before pursuing
TURN_IN_PLACE = math.radians(60.0)
TURN_GAIN = 2.0
NAVIGATION_FAILURE = "navigation_failure"
COLLISION = "collision"


def footprint_collides(world: OccupancyGrid, x, y, radius):
    """True if a disc at (x, y) overlaps any occupied cell square of ``world``."""
    res = world.resolution
    ix, iy = world.world_to_cell(x, y)
    k = int(math.ceil(radius / res)) + 1
    r0, r1 = max(int(iy) - k, 0), min(int(iy) + k + 1, world.height)
    c0, c1 = max(int(ix) - k, 0), min(int(ix) + k + 1, world.width)
    if not world.contains(x, y):
        return True
    patch = world.cells[r0:r1, c0:c1] == OCCUPIED
    if not patch.any():
        return False
    rr, cc = np.nonzero(patch)
    x0 = world.origin.x + (cc + c0) * res
    y0 = world.origin.y + (rr + r0) * res
    dx = np.maximum(np.maximum(x0 - x, 0.0), x - (x0 + res))
    dy = np.maximum(np.maximum(y0 - y, 0.0), y - (y0 + res))
    return bool((dx * dx + dy * dy < radius * radius).any())


def _closest_on_path(pts, cum, p, s_min):
    """Arclength of the point on the polyline nearest to p, not before s_min."""
    best_s, best_d = s_min, math.inf
    for i in range(len(pts) - 1):
        if cum[i + 1] < s_min:
            continue
        a, b = pts[i], pts[i + 1]
        ab = b - a
        L2 = float(ab @ ab)
        t = 0.0 if L2 == 0 else float(np.clip((p - a) @ ab / L2, 0.0, 1.0))
        s = cum[i] + t * (cum[i + 1] - cum[i])
        if s < s_min:
            s = s_min
            t = (s - cum[i]) / max(cum[i + 1] - cum[i], 1e-12)
        q = a + t * ab
        d = float(np.hypot(*(p - q)))
        if d < best_d:
            best_d, best_s = d, s
    return best_s


def _point_at(pts, cum, s):
    if s >= cum[-1]:
        return pts[-1]
    i = int(np.searchsorted(cum, s, side="right") - 1)
    i = min(max(i, 0), len(pts) - 2)
    seg = cum[i + 1] - cum[i]
    t = 0.0 if seg == 0 else (s - cum[i]) / seg
    return pts[i] + t * (pts[i + 1] - pts[i])


def _path_samples(grid, pts, cum, s_from):
    """Cells (ix, iy) under the remaining path from arclength s_from, or None if it leaves the grid."""
    res = grid.resolution
    s = np.append(np.arange(s_from, cum[-1], res / 2.0), cum[-1])
    ix, iy = grid.world_to_cell(np.interp(s, cum, pts[:, 0]), np.interp(s, cum, pts[:, 1]))
    if not grid.in_bounds(ix, iy).all():
        return None
    return ix, iy


def _path_blocked(costmap, pts, cum, s_from):
    """Does the remaining path (from arclength s_from) cross a lethal cell?"""
    cells = _path_samples(costmap.base, pts, cum, s_from)
    if cells is None:
        return True
    ix, iy = cells
    return bool(np.isinf(costmap.cost[iy, ix]).any())


def _near_new_obstacles(grid, new_cells, pts, cum, s_from, radius):
    """Could newly occupied cells make the remaining path lethal?

    Lethal cells only appear around new obstacles, so it is enough to test
    the path's cells against those within ``radius`` (cell-center distance).
    """
    rows, cols = new_cells
    if len(rows) == 0:
        return False
    cells = _path_samples(grid, pts, cum, s_from)
    if cells is None:
        return True
    ix, iy = cells
    lim = radius / grid.resolution + 1e-9
    d2 = (ix[:, None] - cols[None, :]) ** 2 + (iy[:, None] - rows[None, :]) ** 2
    return bool((d2 <= lim * lim).any())


def _escape_cell(costmap, x, y, max_radius=0.5):
    """Nearest non-lethal cell center to (x, y) within max_radius, or None."""
    r, c = costmap.cell(x, y)
    k = int(math.ceil(max_radius / costmap.resolution))
    r0, r1 = max(r - k, 0), min(r + k + 1, costmap.shape[0])
    c0, c1 = max(c - k, 0), min(c + k + 1, costmap.shape[1])
    ok = np.isfinite(costmap.cost[r0:r1, c0:c1])
    if not ok.any():
        return None
    rr, cc = np.nonzero(ok)
    d = (rr + r0 - r) ** 2 + (cc + c0 - c) ** 2
    i = int(np.argmin(d))
    if d[i] * costmap.resolution ** 2 > max_radius ** 2:
        return None
    return costmap.center((rr[i] + r0, cc[i] + c0))


def _plan(costmap, pose, goal):
    if costmap.is_lethal_xy(pose.x, pose.y):
        esc = _escape_cell(costmap, pose.x, pose.y)
        if esc is None:
            raise NoPath("robot is boxed in by lethal cells")
        pts = plan_path(costmap, Pose2D(esc[0], esc[1], pose.theta), goal)
        return [(pose.x, pose.y)] + pts
    return plan_path(costmap, pose, goal)


def _as_arrays(path):
    pts = np.asarray(path, dtype=float)
    seg = np.hypot(*np.diff(pts, axis=0).T) if len(pts) > 1 else np.zeros(0)
    return pts, np.concatenate([[0.0], np.cumsum(seg)])


@dataclass
class DriveResult:
    trajectory: Trajectory
    outcome: str
    final_pose: Pose2D
    replans: int = 0
    ticks: int = 0


def drive_to(world: OccupancyGrid, belief, start: Pose2D, goal, cfg: DriveConfig | None = None,
             t0: float = 0.0, on_scan=None) -> DriveResult:
    """Drive from ``start`` toward ``goal`` under the belief's costmap.

    ``belief`` is a StaticBelief, a MappingBelief or any object with
    ``update(pose, scan)`` and ``costmap()`` sharing the world's frame;
    ``update`` may return the (rows, cols) of newly occupied cells so the
    costmap is only rebuilt when they come near the path. ``world`` is the
    ground truth used only for simulated scans and collision checks. ``on_scan(t, pose,
    scan)`` is called for every simulated scan.
    """
    cfg = cfg or DriveConfig()
    goal = np.asarray(goal, dtype=float)
    pose = start
    t = t0
    times, poses = [t], [pose.as_tuple()]

    def sense(p):
        scan = simulate_scan(world, p, cfg.scan_fov, cfg.scan_beams, cfg.scan_range)
        if on_scan is not None:
            on_scan(t, p, scan)
        return belief.update(p, scan)

    def result(outcome, ticks, replans):
        return DriveResult(Trajectory(times, poses), outcome, pose, replans, ticks)

    lethal_radius = getattr(belief, "params", {}).get("robot_radius", cfg.robot_radius)
    sense(pose)
    try:
        pts, cum = _as_arrays(_plan(belief.costmap(), pose, goal))
    except NoPath:
        return result(NAVIGATION_FAILURE, 0, 0)
    s_prog = 0.0
    replans, failures = 0, 0
    for tick in range(cfg.step_budget):
        p = np.array([pose.x, pose.y])
        if float(np.hypot(*(p - goal))) < cfg.goal_tolerance:
            return result(REACHED, tick, replans)
        if pts is None:
            v = w = 0.0
        else:
            s_prog = _closest_on_path(pts, cum, p, s_prog)
            target = _point_at(pts, cum, s_prog + cfg.lookahead)
            to = target - p
            ld = float(np.hypot(*to))
            alpha = wrap_angle(math.atan2(to[1], to[0]) - pose.theta) if ld > 1e-9 else 0.0
            if abs(alpha) > TURN_IN_PLACE:
                v = 0.0
                w = float(np.clip(TURN_GAIN * alpha, -cfg.max_angular_speed, cfg.max_angular_speed))
            else:
                dist_goal = float(np.hypot(*(goal - p)))
                v = cfg.max_speed * math.cos(alpha)
                v = min(v, dist_goal / cfg.control_dt)
                w = 2.0 * v * math.sin(alpha) / max(ld, 1e-9)
                if abs(w) > cfg.max_angular_speed:
                    w = math.copysign(cfg.max_angular_speed, w)
                    v = min(v, abs(w) * max(ld, 1e-9) / (2.0 * max(abs(math.sin(alpha)), 1e-9)))
        dt = cfg.control_dt
        th = pose.theta
        if abs(w) > 1e-9:
            nx = pose.x + v / w * (math.sin(th + w * dt) - math.sin(th))
            ny = pose.y - v / w * (math.cos(th + w * dt) - math.cos(th))
        else:
            nx = pose.x + v * dt * math.cos(th)
            ny = pose.y + v * dt * math.sin(th)
        pose = Pose2D(nx, ny, th + w * dt)
        t += dt
        times.append(t)
        poses.append(pose.as_tuple())
        if footprint_collides(world, pose.x, pose.y, cfg.robot_radius):
            return result(COLLISION, tick + 1, replans)
        new = sense(pose)
        if new is None:
            stale = pts is None or _path_blocked(belief.costmap(), pts, cum, s_prog)
        else:
            stale = pts is None or _near_new_obstacles(world, new, pts, cum, s_prog, lethal_radius)
            stale = stale and (pts is None or _path_blocked(belief.costmap(), pts, cum, s_prog))
        if stale:
            try:
                pts, cum = _as_arrays(_plan(belief.costmap(), pose, goal))
                s_prog = 0.0
                replans += 1
                failures = 0
            except NoPath:
                pts = None
                failures += 1
                if failures >= cfg.replan_patience:
                    return result(NAVIGATION_FAILURE, tick + 1, replans)
    return result(NAVIGATION_FAILURE, cfg.step_budget, replans)
