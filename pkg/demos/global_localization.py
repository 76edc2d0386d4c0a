"""Watch a particle filter localize from a uniform start in the furnished room."""
import math

import numpy as np

from vlnsim import worlds
from vlnsim.gridworld import Pose2D, simulate_scan
from vlnsim.localization import OdometryDelta, pf_init

room = worlds.localization_room()
rng = np.random.default_rng(0)

# a slow loop around the room center
truth = [Pose2D(5.0 + 1.5 * math.cos(k * 0.1), 5.0 + 1.5 * math.sin(k * 0.1), k * 0.1 + math.pi / 2)
         for k in range(40)]
pf = pf_init(room, 2000, "uniform_free", seed=1, n_init=20000)
for k, (a, b) in enumerate(zip(truth[:-1], truth[1:]), start=1):
    odom = OdometryDelta.between(a, b)
    noisy = OdometryDelta(odom.d_rot1 + rng.normal(0, 0.035), odom.d_trans + rng.normal(0, 0.05 * odom.d_trans),
                          odom.d_rot2 + rng.normal(0, 0.035))
    pf.step(noisy, simulate_scan(room, b))
    est = pf.estimate()
    err = math.hypot(est.x - b.x, est.y - b.y)
    if k % 5 == 0 or k == 1:
        print(f"step {k:2d}: {len(pf):5d} particles, ESS {pf.effective_sample_size():7.1f}, error {err:.3f} m")
