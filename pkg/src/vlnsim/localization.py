"""Monte Carlo localization against a known occupancy grid.

Odometry motion model (rot1, trans, rot2) with Gaussian noise, a likelihood
field measurement model over an exact Euclidean distance transform, and
low-variance systematic resampling when the effective sample size drops
below half the particle count.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateWeights, InvalidMap
from .gridworld import FREE, OCCUPIED, LaserScan, OccupancyGrid, Pose2D, wrap_angles

BEAM_STRIDE = 10


@dataclass(frozen=True)
class OdometryDelta:
    d_rot1: float
    d_trans: float
    d_rot2: float

    @classmethod
    def between(cls, a: Pose2D, b: Pose2D):
        dx, dy = b.x - a.x, b.y - a.y
        trans = math.hypot(dx, dy)
        rot1 = float(wrap_angles(math.atan2(dy, dx) - a.theta)) if trans > 1e-9 else 0.0
        rot2 = float(wrap_angles(b.theta - a.theta - rot1))
        return cls(rot1, trans, rot2)

    def apply(self, pose: Pose2D) -> Pose2D:
        th = pose.theta + self.d_rot1
        return Pose2D(pose.x + self.d_trans * math.cos(th), pose.y + self.d_trans * math.sin(th),
                      th + self.d_rot2)


def distance_field(grid: OccupancyGrid):
    """Meters from each cell center to the nearest occupied cell center."""
    occ = grid.cells == OCCUPIED
    if not occ.any():
        return np.full(grid.shape, np.inf)
    return ndimage.distance_transform_edt(~occ) * grid.resolution


class ParticleFilter:
    def __init__(self, grid, poses, likelihood_sigma=0.2, sigma_trans=0.05, sigma_rot=0.035,
                 seed=0, beam_stride=BEAM_STRIDE, max_field_distance=2.0, field=None):
        self.map = grid
        self.poses = np.array(poses, dtype=float).reshape(-1, 3)
        if len(self.poses) < 1:
            raise ValueError("need at least one particle")
        self.weights = np.full(len(self.poses), 1.0 / len(self.poses))
        self.likelihood_sigma = float(likelihood_sigma)
        self.sigma_trans = float(sigma_trans)
        self.sigma_rot = float(sigma_rot)
        self.rng = np.random.default_rng(seed)
        self.beam_stride = int(beam_stride)
        self.max_field_distance = float(max_field_distance)
        self.field = distance_field(grid) if field is None else field
        self.degenerate = False
        self.resampled = False
        self.n_target = len(self.poses)

    def __len__(self):
        return len(self.poses)

    def _lookup(self, x, y):
        g = self.map
        fx = (x - g.origin.x) / g.resolution
        fy = (y - g.origin.y) / g.resolution
        # points beyond the grid take the nearest border cell's distance plus
        # their offset from the border, so walls on the map edge still attract
        cx = np.clip(fx, 0.0, g.width - 1e-9)
        cy = np.clip(fy, 0.0, g.height - 1e-9)
        d = self.field[cy.astype(int), cx.astype(int)] + np.hypot(fx - cx, fy - cy) * g.resolution
        return np.minimum(d, self.max_field_distance)

    def predict(self, odom: OdometryDelta):
        n = len(self.poses)
        r1 = odom.d_rot1 + self.rng.normal(0.0, self.sigma_rot, n) if self.sigma_rot > 0 else np.full(n, odom.d_rot1)
        tr = odom.d_trans + self.rng.normal(0.0, self.sigma_trans, n) if self.sigma_trans > 0 else np.full(n, odom.d_trans)
        r2 = odom.d_rot2 + self.rng.normal(0.0, self.sigma_rot, n) if self.sigma_rot > 0 else np.full(n, odom.d_rot2)
        th = self.poses[:, 2] + r1
        self.poses[:, 0] += tr * np.cos(th)
        self.poses[:, 1] += tr * np.sin(th)
        self.poses[:, 2] = wrap_angles(th + r2)

    def log_likelihood(self, scan: LaserScan):
        sel = np.arange(0, scan.n_beams, self.beam_stride)
        sel = sel[scan.ranges[sel] <= scan.range_max]
        if sel.size == 0:
            return np.zeros(len(self.poses))
        r = scan.ranges[sel]
        a = scan.angles[sel]
        th = self.poses[:, 2:3] + a[None, :]
        ex = self.poses[:, 0:1] + r[None, :] * np.cos(th)
        ey = self.poses[:, 1:2] + r[None, :] * np.sin(th)
        d = self._lookup(ex, ey)
        return -(d ** 2).sum(axis=1) / (2.0 * self.likelihood_sigma ** 2)

    def update(self, scan: LaserScan):
        loglik = self.log_likelihood(scan)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights) + loglik
        self.degenerate = False
        if not np.isfinite(logw).any():
            self.degenerate = True
            warnings.warn("all particle weights vanished; resetting to uniform", DegenerateWeights)
            self.weights = np.full(len(self.poses), 1.0 / len(self.poses))
            return
        w = np.exp(logw - logw.max())
        self.weights = w / w.sum()

    def effective_sample_size(self):
        return 1.0 / float(np.sum(self.weights ** 2))

    def resample(self, n_out=None):
        """Systematic resampling to ``n_out`` equally weighted particles."""
        n_out = len(self.poses) if n_out is None else int(n_out)
        positions = (self.rng.random() + np.arange(n_out)) / n_out
        cum = np.cumsum(self.weights)
        cum[-1] = 1.0
        idx = np.searchsorted(cum, positions, side="right")
        self.poses = self.poses[np.minimum(idx, len(self.poses) - 1)].copy()
        self.weights = np.full(n_out, 1.0 / n_out)

    def step(self, odom: OdometryDelta, scan: LaserScan):
        self.predict(odom)
        self.update(scan)
        # an oversized initial set is always cut down after its first update
        self.resampled = (len(self.poses) > self.n_target
                          or self.effective_sample_size() < len(self.poses) / 2.0)
        if self.resampled:
            self.resample(self.n_target)
        return self

    def estimate(self) -> Pose2D:
        w = self.weights
        x = float(w @ self.poses[:, 0])
        y = float(w @ self.poses[:, 1])
        theta = math.atan2(float(w @ np.sin(self.poses[:, 2])), float(w @ np.cos(self.poses[:, 2])))
        return Pose2D(x, y, theta)


def pf_init(grid: OccupancyGrid, n: int, mode="uniform_free", pose: Pose2D | None = None,
            sigmas=(0.0, 0.0, 0.0), seed=0, n_init=None, **kwargs) -> ParticleFilter:
    """Create ``n`` equally weighted particles.

    Parameters
    ----------
    mode : {"gaussian", "uniform_free"}
        ``gaussian`` samples around ``pose`` with per-axis ``sigmas`` (x, y,
        theta); ``uniform_free`` draws free cells uniformly with a uniform
        position inside the cell and a uniform heading.
    n_init : int, optional
        Uniform mode only: draw this many particles instead and shrink to
        ``n`` at the first resampling. The likelihood peak in heading is a
        few degrees wide, so a global start needs a dense first sweep.
    """
    rng = np.random.default_rng(seed)
    if mode == "gaussian":
        if pose is None:
            raise ValueError("gaussian initialization needs a pose")
        sx, sy, st = sigmas
        poses = np.column_stack([
            pose.x + (rng.normal(0.0, sx, n) if sx > 0 else np.zeros(n)),
            pose.y + (rng.normal(0.0, sy, n) if sy > 0 else np.zeros(n)),
            wrap_angles(pose.theta + (rng.normal(0.0, st, n) if st > 0 else np.zeros(n))),
        ])
    elif mode == "uniform_free":
        iy, ix = np.nonzero(grid.cells == FREE)
        if ix.size == 0:
            raise InvalidMap("map has no free cells")
        m = max(n, n_init or n)
        k = rng.integers(0, ix.size, m)
        res = grid.resolution
        poses = np.column_stack([
            grid.origin.x + (ix[k] + rng.random(m)) * res,
            grid.origin.y + (iy[k] + rng.random(m)) * res,
            rng.uniform(-math.pi, math.pi, m),
        ])
    else:
        raise ValueError(f"unknown init mode {mode!r}")
    # the filter's own generator continues from the init stream
    pf = ParticleFilter(grid, poses, seed=rng.integers(2**63), **kwargs)
    pf.n_target = n
    return pf


def pf_step(pf: ParticleFilter, odom: OdometryDelta, scan: LaserScan) -> ParticleFilter:
    return pf.step(odom, scan)


def pf_estimate(pf: ParticleFilter) -> Pose2D:
    """Weighted mean position and circular weighted mean heading."""
    return pf.estimate()


def pose_log_line(t, pose: Pose2D, estimate: bool):
    return json.dumps({"t": float(t), "x": pose.x, "y": pose.y, "theta": pose.theta,
                       "estimate": bool(estimate)})
