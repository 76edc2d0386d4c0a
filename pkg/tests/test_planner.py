import math

import numpy as np
import pytest
from scipy import ndimage

from oracles import bfs_steps
from vlnsim import worlds
from vlnsim.errors import NoPath
from vlnsim.gridworld import FREE, OCCUPIED, UNKNOWN, OccupancyGrid, Pose2D
from vlnsim.planner import (COLLISION, LETHAL, NAVIGATION_FAILURE, PENALTY, REACHED, DriveConfig,
                            StaticBelief, astar, build_costmap, drive_to, footprint_collides,
                            line_cells, plan_path)


def test_all_free_unit_cost():
    cm = build_costmap(OccupancyGrid.empty(30, 20))
    assert np.all(cm.cost == 1.0)


def test_single_cell_lethal_disc():
    cells = np.full((41, 41), FREE, dtype=np.int8)
    cells[20, 20] = OCCUPIED
    cm = build_costmap(OccupancyGrid(cells, 0.05), robot_radius=0.2)
    rr, cc = np.mgrid[0:41, 0:41]
    # brute dilation: every cell center within 4 cells of the occupied center
    disc = (rr - 20) ** 2 + (cc - 20) ** 2 <= 16
    assert np.array_equal(cm.lethal, disc)
    assert cm.lethal[20, 24] and not cm.lethal[20, 25]
    assert np.all(cm.cost[~disc] >= 1.0)


def test_inflation_decays_monotonically():
    cells = np.full((41, 41), FREE, dtype=np.int8)
    cells[20, 20] = OCCUPIED
    cm = build_costmap(OccupancyGrid(cells, 0.05), robot_radius=0.2, inflation_radius=0.25)
    row = cm.cost[20, 25:]
    assert np.all(np.diff(row) <= 0)
    assert row[0] > 1.0 and row[-1] == 1.0


def test_unknown_policies():
    cells = np.full((10, 10), FREE, dtype=np.int8)
    cells[5, 5] = UNKNOWN
    g = OccupancyGrid(cells, 0.05)
    assert math.isinf(build_costmap(g, robot_radius=0.0, unknown_policy=LETHAL).cost[5, 5])
    cm = build_costmap(g, robot_radius=0.0, inflation_radius=0.0, unknown_policy=PENALTY)
    assert cm.cost[5, 5] == 2.0
    assert cm.cost[4, 4] == 1.0
    with pytest.raises(ValueError):
        build_costmap(g, unknown_policy="maybe")


def test_open_grid_straight_path():
    g = OccupancyGrid.empty(100, 100)
    cm = build_costmap(g)
    start, goal = Pose2D(0.5, 0.7, 0.0), (4.3, 3.1)
    pts = plan_path(cm, start, goal)
    L = sum(math.dist(a, b) for a, b in zip(pts[:-1], pts[1:]))
    euclid = math.dist((start.x, start.y), goal)
    assert abs(L - euclid) <= math.sqrt(2) * g.resolution


def test_path_through_gap():
    g = worlds.wall_with_gap(gap=0.8)
    cm = build_costmap(g)
    pts = plan_path(cm, Pose2D(1.0, 1.0, 0.0), (5.0, 3.0))
    # the only crossing of the dividing wall is the gap around y = 2
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    dense = np.concatenate([np.linspace(pts[i], pts[i + 1], 50) for i in range(len(pts) - 1)])
    k = np.argmin(np.abs(dense[:, 0] - 3.0))
    assert abs(dense[k, 1] - 2.0) < 0.4
    assert xs[0] < 3.0 < xs[-1] and ys[-1] == 3.0


def test_gap_narrower_than_robot_blocks():
    g = worlds.wall_with_gap(gap=0.35)
    with pytest.raises(NoPath):
        plan_path(build_costmap(g), Pose2D(1.0, 1.0, 0.0), (5.0, 3.0))


def _maze(rng, n=15, extra=10):
    """Perfect maze on odd cells plus a few knocked-out walls for loops.

    Cells with both indices even are always walls, so every diagonal move
    has a blocked orthogonal neighbor and 8-connected A* degenerates to
    4-connected unit steps.
    """
    size = 2 * n + 1
    free = np.zeros((size, size), bool)
    stack = [(1, 1)]
    free[1, 1] = True
    while stack:
        r, c = stack[-1]
        nbrs = [(r + dr, c + dc) for dr, dc in ((2, 0), (-2, 0), (0, 2), (0, -2))
                if 0 < r + dr < size and 0 < c + dc < size and not free[r + dr, c + dc]]
        if not nbrs:
            stack.pop()
            continue
        nr, nc = nbrs[rng.integers(len(nbrs))]
        free[(r + nr) // 2, (c + nc) // 2] = True
        free[nr, nc] = True
        stack.append((nr, nc))
    walls = [(r, c) for r in range(1, size - 1) for c in range(1, size - 1)
             if not free[r, c] and (r % 2) != (c % 2)]
    for k in rng.choice(len(walls), extra, replace=False):
        free[walls[k]] = True
    return free


@pytest.mark.parametrize("seed", range(8))
def test_maze_matches_bfs(seed):
    rng = np.random.default_rng(seed)
    free = _maze(rng)
    cells = np.where(free, FREE, OCCUPIED).astype(np.int8)
    cm = build_costmap(OccupancyGrid(cells, 0.05), robot_radius=0.0, inflation_radius=0.0)
    odd = [(r, c) for r in range(1, free.shape[0], 2) for c in range(1, free.shape[1], 2)]
    for _ in range(5):
        a, b = (odd[i] for i in rng.choice(len(odd), 2, replace=False))
        path, cost = astar(cm, a, b)
        steps = bfs_steps(free.tolist(), a, b)
        assert len(path) - 1 == steps
        assert cost == pytest.approx(steps)


def _random_costmap(seed, shape=(40, 40), density=0.12):
    rng = np.random.default_rng(seed)
    cells = np.where(rng.random(shape) < density, OCCUPIED, FREE).astype(np.int8)
    cm = build_costmap(OccupancyGrid(cells, 0.05), robot_radius=0.05, inflation_radius=0.15)
    free = np.argwhere(~cm.lethal)
    return cm, rng, free


@pytest.mark.parametrize("seed", range(10))
def test_raw_path_respects_lethal_and_adjacency(seed):
    cm, rng, free = _random_costmap(seed)
    checked = 0
    for _ in range(20):
        a, b = (tuple(free[i]) for i in rng.choice(len(free), 2, replace=False))
        try:
            path, _ = astar(cm, a, b)
        except NoPath:
            continue
        checked += 1
        arr = np.array(path)
        assert not cm.lethal[arr[:, 0], arr[:, 1]].any()
        assert np.abs(np.diff(arr, axis=0)).max() <= 1
    assert checked > 0


def _path_cost(cm, cells):
    """Cost of an arbitrary 8-connected walk under the same step rule as A*."""
    total = 0.0
    for (r0, c0), (r1, c1) in zip(cells[:-1], cells[1:]):
        step = math.sqrt(2) if (r0 != r1 and c0 != c1) else 1.0
        total += step * cm.cost[r1, c1]
    return total


def _staircase(a, b):
    """Hand-made alternative: all row moves, then all column moves."""
    (r, c), (r1, c1) = a, b
    out = [(r, c)]
    while r != r1:
        r += 1 if r1 > r else -1
        out.append((r, c))
    while c != c1:
        c += 1 if c1 > c else -1
        out.append((r, c))
    return out


@pytest.mark.parametrize("seed", range(10))
def test_astar_beats_hand_alternatives(seed):
    rng = np.random.default_rng(100 + seed)
    # smooth random cost field without lethal cells
    cost = 1.0 + 5.0 * ndimage.gaussian_filter(rng.random((25, 25)), 2.0)
    cm = build_costmap(OccupancyGrid.empty(25, 25))
    cm.cost = cost
    for _ in range(10):
        a = tuple(rng.integers(0, 25, 2))
        b = tuple(rng.integers(0, 25, 2))
        _, best = astar(cm, a, b)
        assert best <= _path_cost(cm, _staircase(a, b)) + 1e-9
        assert best <= _path_cost(cm, line_cells(a, b)) + 1e-9
        alt = [(r, c) for c, r in _staircase(a[::-1], b[::-1])]
        assert best <= _path_cost(cm, alt) + 1e-9


def test_lethal_goal_raises():
    g = worlds.open_room(4.0, 4.0)
    cm = build_costmap(g)
    with pytest.raises(NoPath):
        plan_path(cm, Pose2D(2.0, 2.0, 0.0), (0.02, 2.0))


def test_line_cells_endpoints_and_connectivity():
    for a, b in [((0, 0), (5, 3)), ((4, 4), (0, 0)), ((2, 7), (2, 1)), ((0, 0), (3, 3))]:
        cells = line_cells(a, b)
        assert cells[0] == a and cells[-1] == b
        assert np.abs(np.diff(np.array(cells), axis=0)).max() <= 1


def test_drive_config_positive():
    DriveConfig()
    with pytest.raises(ValueError):
        DriveConfig(max_speed=0.0)
    with pytest.raises(ValueError):
        DriveConfig(goal_tolerance=-1.0)


def test_footprint_collides():
    g = worlds.open_room(4.0, 4.0)
    assert not footprint_collides(g, 2.0, 2.0, 0.2)
    assert footprint_collides(g, 0.25, 2.0, 0.2)
    assert not footprint_collides(g, 0.31, 2.0, 0.2)
    assert footprint_collides(g, -1.0, 2.0, 0.2)


def test_drive_corridor_length():
    g = worlds.corridor(length=12.0, width=2.0)
    start, goal = Pose2D(1.0, 1.0, 0.0), (11.0, 1.0)
    res = drive_to(g, StaticBelief(g), start, goal)
    assert res.outcome == REACHED
    L = res.trajectory.length
    assert abs(L - 10.0) / 10.0 < 0.05
    assert math.dist((res.final_pose.x, res.final_pose.y), goal) < DriveConfig().goal_tolerance


def test_drive_goal_inside_obstacle():
    g = worlds.open_room(6.0, 6.0, furniture=[(3.0, 3.0, 4.0, 4.0)])
    res = drive_to(g, StaticBelief(g), Pose2D(1.0, 1.0, 0.0), (3.5, 3.5))
    assert res.outcome == NAVIGATION_FAILURE


def test_drive_hidden_obstacle_replans():
    truth = worlds.Canvas(6.0, 4.0).border().fill(2.9, 1.0, 3.1, 4.0).grid()
    prior = worlds.Canvas(6.0, 4.0).border().grid()
    assert truth.height == 80
    belief = StaticBelief(prior)
    # short sensor range keeps the wall out of the first scan
    cfg = DriveConfig(scan_range=1.2)
    res = drive_to(truth, belief, Pose2D(1.0, 3.0, 0.0), (5.0, 3.0), cfg)
    assert res.outcome == REACHED
    assert res.replans >= 1
    # the detour goes below the hidden wall
    ys = res.trajectory.positions[:, 1]
    assert ys.min() < 1.0


def test_drive_step_budget_exhausted():
    g = worlds.corridor(length=12.0, width=2.0)
    res = drive_to(g, StaticBelief(g), Pose2D(1.0, 1.0, 0.0), (11.0, 1.0), DriveConfig(step_budget=5))
    assert res.outcome == NAVIGATION_FAILURE
    assert res.ticks == 5


def _clear_point(rng, g, dist, margin):
    while True:
        x = rng.uniform(0.5, g.width * g.resolution - 0.5)
        y = rng.uniform(0.5, g.height * g.resolution - 0.5)
        ix, iy = g.world_to_cell(x, y)
        if dist[int(iy), int(ix)] > margin:
            return x, y


@pytest.mark.parametrize("seed", range(8))
def test_drive_belief_equals_truth(seed):
    rng = np.random.default_rng(seed)
    boxes = []
    for _ in range(4):
        x0, y0 = rng.uniform(1.0, 7.0), rng.uniform(1.0, 7.0)
        boxes.append((x0, y0, x0 + rng.uniform(0.3, 1.5), y0 + rng.uniform(0.3, 1.5)))
    g = worlds.open_room(8.0, 8.0, furniture=boxes)
    dist = ndimage.distance_transform_edt(g.cells != OCCUPIED) * g.resolution
    cm = build_costmap(g)
    for _ in range(10):
        sx, sy = _clear_point(rng, g, dist, 0.45)
        gx, gy = _clear_point(rng, g, dist, 0.45)
        try:
            plan_path(cm, Pose2D(sx, sy, 0.0), (gx, gy))
        except NoPath:
            continue
        break
    else:
        pytest.skip("no reachable pair drawn")
    res = drive_to(g, StaticBelief(g), Pose2D(sx, sy, rng.uniform(-math.pi, math.pi)), (gx, gy))
    assert res.outcome == REACHED
    assert res.outcome != COLLISION
    assert not any(footprint_collides(g, x, y, 0.2) for x, y in res.trajectory.positions)
