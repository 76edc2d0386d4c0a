"""Ground-truth simulation harnesses shared by module and acceptance tests."""
import math

import numpy as np

from vlnsim.gridworld import Pose2D, simulate_scan
from vlnsim.localization import OdometryDelta, pf_init


def loop_path(seed, steps, center=(5.0, 5.0), radius=1.5, turns=1.0):
    """Counter-clockwise circle with a seeded starting phase, heading tangent."""
    phase = np.random.default_rng(seed).uniform(0, 2 * math.pi)
    out = []
    for k in range(steps + 1):
        a = phase + k * 2 * math.pi * turns / steps
        out.append(Pose2D(center[0] + radius * math.cos(a), center[1] + radius * math.sin(a), a + math.pi / 2))
    return out


def track(world, truth, pf, sigma_trans, sigma_rot, seed):
    """Feed noisy odometry and exact scans along ``truth``; per-step position errors."""
    rng = np.random.default_rng(seed)
    errors = []
    for a, b in zip(truth[:-1], truth[1:]):
        od = OdometryDelta.between(a, b)
        od = OdometryDelta(od.d_rot1 + rng.normal(0, sigma_rot), od.d_trans + rng.normal(0, sigma_trans),
                           od.d_rot2 + rng.normal(0, sigma_rot))
        pf.step(od, simulate_scan(world, b))
        e = pf.estimate()
        errors.append(math.hypot(e.x - b.x, e.y - b.y))
    return errors


def tracking_trial(world, seed, steps=50, n=300, sigma_trans=0.05, sigma_rot=math.radians(2.0)):
    truth = loop_path(seed, steps)
    pf = pf_init(world, n, "gaussian", pose=truth[0], sigmas=(0.1, 0.1, 0.05), seed=seed,
                 sigma_trans=sigma_trans, sigma_rot=sigma_rot)
    return track(world, truth, pf, sigma_trans, sigma_rot, 1000 + seed)


def global_trial(world, seed, steps=30, n=2000, n_init=20000, sigma_trans=0.05, sigma_rot=math.radians(2.0)):
    truth = loop_path(seed, steps)
    pf = pf_init(world, n, "uniform_free", seed=seed, n_init=n_init,
                 sigma_trans=sigma_trans, sigma_rot=sigma_rot)
    return track(world, truth, pf, sigma_trans, sigma_rot, 1000 + seed)
