"""Synthetic ground-truth worlds: rooms, corridors and a small office floor.

Each builder returns an OccupancyGrid; ``office_world`` also places
viewpoints and builds the navigation graph from line-of-sight visibility.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .gridworld import FREE, OCCUPIED, OccupancyGrid
from .navgraph import NavGraph, Viewpoint, build_graph

WALL = 0.1
VISIBILITY_CLEARANCE = 0.3


class Canvas:
    """Mutable cell buffer addressed in meters; ``grid()`` freezes it."""

    def __init__(self, width_m, height_m, resolution=0.05):
        self.resolution = resolution
        self.cells = np.full((int(round(height_m / resolution)), int(round(width_m / resolution))),
                             FREE, dtype=np.int8)

    def _span(self, a, b, n):
        i0 = int(np.floor(a / self.resolution + 1e-9))
        i1 = int(np.ceil(b / self.resolution - 1e-9))
        return max(i0, 0), min(i1, n)

    def fill(self, x0, y0, x1, y1, value=OCCUPIED):
        """Set every cell overlapping the box [x0, x1] x [y0, y1]."""
        c0, c1 = self._span(min(x0, x1), max(x0, x1), self.cells.shape[1])
        r0, r1 = self._span(min(y0, y1), max(y0, y1), self.cells.shape[0])
        self.cells[r0:r1, c0:c1] = value
        return self

    def border(self, thickness=WALL):
        h, w = self.cells.shape
        W, H = w * self.resolution, h * self.resolution
        self.fill(0, 0, W, thickness)
        self.fill(0, H - thickness, W, H)
        self.fill(0, 0, thickness, H)
        self.fill(W - thickness, 0, W, H)
        return self

    def hwall(self, y, x0, x1, gaps=(), thickness=WALL):
        """Horizontal wall centered on y with (center, width) door gaps."""
        self.fill(x0, y - thickness / 2, x1, y + thickness / 2)
        for cx, width in gaps:
            self.fill(cx - width / 2, y - thickness, cx + width / 2, y + thickness, FREE)
        return self

    def vwall(self, x, y0, y1, gaps=(), thickness=WALL):
        self.fill(x - thickness / 2, y0, x + thickness / 2, y1)
        for cy, width in gaps:
            self.fill(x - thickness, cy - width / 2, x + thickness, cy + width / 2, FREE)
        return self

    def grid(self):
        return OccupancyGrid(self.cells.copy(), self.resolution)


def open_room(width=10.0, height=10.0, resolution=0.05, furniture=()):
    """Walled room; ``furniture`` is a list of (x0, y0, x1, y1) boxes."""
    c = Canvas(width, height, resolution).border()
    for box in furniture:
        c.fill(*box)
    return c.grid()


def localization_room(resolution=0.05):
    """10 x 10 m room whose furniture has no rotational symmetry, so scans
    disambiguate pose (the bare square would be fourfold ambiguous)."""
    return open_room(10.0, 10.0, resolution, furniture=[
        (0.0, 2.9, 3.5, 3.1),  # partition off the west wall
        (7.0, 7.0, 8.5, 8.0),
        (2.2, 7.2, 2.8, 7.8),
        (8.0, 1.0, 8.4, 3.0),
    ])


def corridor(length=12.0, width=2.0, resolution=0.05):
    return Canvas(length, width, resolution).border().grid()


def wall_with_gap(gap=0.8, width=6.0, height=4.0, resolution=0.05):
    """Room split by a vertical wall at mid-width with one centered gap."""
    c = Canvas(width, height, resolution).border()
    c.vwall(width / 2, 0, height, gaps=[(height / 2, gap)])
    return c.grid()


def office_world(resolution=0.05):
    """20 x 14 m floor: a 2 m corridor with four rooms on each side.

    Every room has a 1.2 m door onto the corridor and a desk in its middle.
    Returns (grid, viewpoints).
    """
    W, H = 20.0, 14.0
    c = Canvas(W, H, resolution).border()
    room_w = 5.0
    doors = [(x0 + room_w / 2, 1.2) for x0 in np.arange(0, W, room_w)]
    c.hwall(6.0, 0, W, gaps=doors)
    c.hwall(8.0, 0, W, gaps=doors)
    for x in (5.0, 10.0, 15.0):
        c.vwall(x, 0, 6.0)
        c.vwall(x, 8.0, H)
    vps = []

    def add(x, y):
        vps.append(Viewpoint(f"vp{len(vps):03d}", (float(x), float(y), 0.0)))

    for k, x0 in enumerate(np.arange(0, W, room_w)):
        cx = x0 + room_w / 2
        # desks sit off-center so rooms are not mirror images of each other
        dy = 0.3 if k % 2 else -0.3
        c.fill(cx - 0.5, 3.0 + dy - 0.3, cx + 0.5, 3.0 + dy + 0.3)
        c.fill(cx - 0.5, 11.0 - dy - 0.3, cx + 0.5, 11.0 - dy + 0.3)
        for y in (1.5, 4.5):
            add(x0 + 1.25, y)
            add(x0 + 3.75, y)
        add(cx, 6.0)
        add(cx, 8.0)
        for y in (9.5, 12.5):
            add(x0 + 1.25, y)
            add(x0 + 3.75, y)
    for x in np.arange(1.0, W, 2.0):
        add(x, 7.0)
    return c.grid(), vps


def segment_clear(dist_field, grid: OccupancyGrid, a, b, clearance):
    """True if every point of segment a-b keeps ``clearance`` from obstacles."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    n = max(int(np.ceil(np.hypot(*(b - a)) / (grid.resolution / 2))), 1) + 1
    s = np.linspace(0.0, 1.0, n)
    pts = a[None, :] + s[:, None] * (b - a)[None, :]
    ix, iy = grid.world_to_cell(pts[:, 0], pts[:, 1])
    if not grid.in_bounds(ix, iy).all():
        return False
    return bool((dist_field[iy, ix] > clearance).all())


def visibility_pairs(grid: OccupancyGrid, viewpoints, clearance=VISIBILITY_CLEARANCE, max_range=None):
    """Unordered viewpoint pairs joined by a straight segment with clearance."""
    occ = grid.cells == OCCUPIED
    dist = ndimage.distance_transform_edt(~occ) * grid.resolution
    pairs = []
    for i, a in enumerate(viewpoints):
        for b in viewpoints[i + 1:]:
            pa, pb = a.position[:2], b.position[:2]
            if max_range is not None and np.hypot(pa[0] - pb[0], pa[1] - pb[1]) > max_range:
                continue
            if segment_clear(dist, grid, pa, pb, clearance):
                pairs.append((a.id, b.id))
    return pairs


def graph_for(grid: OccupancyGrid, viewpoints, max_edge_length=5.0, clearance=VISIBILITY_CLEARANCE) -> NavGraph:
    pairs = visibility_pairs(grid, viewpoints, clearance, max_range=max_edge_length)
    return build_graph(viewpoints, pairs, max_edge_length)


def office_scenario(resolution=0.05):
    """The office grid, its viewpoints and their navigation graph."""
    grid, vps = office_world(resolution)
    return grid, graph_for(grid, vps)
