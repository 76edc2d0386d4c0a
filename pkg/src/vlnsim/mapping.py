"""Log-odds occupancy mapping from laser scans at caller-supplied poses."""
from __future__ import annotations

import numpy as np

from .errors import InvalidPose, InvalidThresholds
from .gridworld import FREE, OCCUPIED, UNKNOWN, LaserScan, OccupancyGrid, Pose2D, trace_cells

L_OCC = 0.85
L_FREE = -0.4
CLAMP = 10.0
# a return exactly on a cell boundary belongs to the cell being entered
_ENDPOINT_NUDGE = 1e-6


class LogOddsMap:
    """Occupancy log-odds on an OccupancyGrid-shaped lattice; 0 means unknown."""

    def __init__(self, width, height, resolution=0.05, origin=None, l_occ=L_OCC, l_free=L_FREE,
                 clamp=CLAMP):
        self.logodds = np.zeros((height, width))
        self.resolution = float(resolution)
        self.origin = origin if origin is not None else Pose2D(0.0, 0.0, 0.0)
        self.l_occ = float(l_occ)
        self.l_free = float(l_free)
        self.clamp = float(clamp)
        self.version = 0

    @classmethod
    def like(cls, grid: OccupancyGrid, **kwargs):
        """Empty map sharing the frame and extent of ``grid``."""
        return cls(grid.width, grid.height, grid.resolution, grid.origin, **kwargs)

    @property
    def width(self):
        return self.logodds.shape[1]

    @property
    def height(self):
        return self.logodds.shape[0]

    @property
    def shape(self):
        return self.logodds.shape

    def copy(self):
        m = LogOddsMap(self.width, self.height, self.resolution, self.origin, self.l_occ,
                       self.l_free, self.clamp)
        m.logodds = self.logodds.copy()
        m.version = self.version
        return m

    def scan_cells(self, pose: Pose2D, scan: LaserScan):
        """Boolean masks (free, occupied) of cells touched by one scan.

        Each cell counts once per scan; a cell that is the endpoint of any
        beam is occupied even if another beam passes through it.
        """
        gx = (pose.x - self.origin.x) / self.resolution
        gy = (pose.y - self.origin.y) / self.resolution
        ix0, iy0 = int(np.floor(gx)), int(np.floor(gy))
        if not (0 <= ix0 < self.width and 0 <= iy0 < self.height):
            raise InvalidPose(f"pose ({pose.x:.3f}, {pose.y:.3f}) is outside the map")
        angles = scan.angles + pose.theta
        hit = scan.ranges <= scan.range_max
        t_end = np.where(hit, scan.ranges / self.resolution + _ENDPOINT_NUDGE,
                         scan.range_max / self.resolution)
        beam, ix, iy, last = trace_cells(self.shape, gx, gy, angles, t_end, ordered=False)
        free = np.zeros(self.shape, dtype=bool)
        occ = np.zeros(self.shape, dtype=bool)
        # the grid is convex, so a beam whose endpoint lies inside it reaches it
        px = gx + t_end * np.cos(angles)
        py = gy + t_end * np.sin(angles)
        reached = hit & (px >= 0) & (px < self.width) & (py >= 0) & (py < self.height)
        is_end = reached[beam] & (ix == last[beam, 0]) & (iy == last[beam, 1])
        free[iy[~is_end], ix[~is_end]] = True
        occ[last[reached, 1], last[reached, 0]] = True
        free &= ~occ
        return free, occ


def integrate_scan(m: LogOddsMap, pose: Pose2D, scan: LaserScan) -> LogOddsMap:
    """Add ``l_free`` to cells each beam passes and ``l_occ`` to return cells.

    No-return beams only clear cells out to ``range_max``. Updates are applied
    in place and the map is returned.
    """
    free, occ = m.scan_cells(pose, scan)
    m.logodds[free] += m.l_free
    m.logodds[occ] += m.l_occ
    np.clip(m.logodds, -m.clamp, m.clamp, out=m.logodds)
    m.version += 1
    return m


def export_grid(m: LogOddsMap, occ_threshold: float = 2.0, free_threshold: float = -2.0) -> OccupancyGrid:
    if occ_threshold <= free_threshold:
        raise InvalidThresholds("occ_threshold must exceed free_threshold")
    cells = np.full(m.shape, UNKNOWN, dtype=np.int8)
    cells[m.logodds >= occ_threshold] = OCCUPIED
    cells[m.logodds <= free_threshold] = FREE
    return OccupancyGrid(cells, m.resolution, m.origin)


def reset(m: LogOddsMap) -> LogOddsMap:
    m.logodds[:] = 0.0
    m.version += 1
    return m
