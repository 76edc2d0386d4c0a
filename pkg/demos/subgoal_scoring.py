"""Predict waypoints from one scan in the office and score them against graph neighbors."""
from vlnsim import worlds
from vlnsim.gridworld import Pose2D, simulate_scan
from vlnsim.subgoal import (DiscreteMeasure, bin_scan, extract_waypoints, geometric_predict, match_eval,
                            neighbor_measure, sinkhorn_divergence)

world, graph = worlds.office_scenario()
vid = graph.included_ids[len(graph.included_ids) // 2]
x, y = graph.xy(vid)
pose = Pose2D(float(x), float(y), 0.0)
radial = bin_scan(simulate_scan(world, pose))
waypoints = extract_waypoints(geometric_predict(radial), pose=pose)
print(f"viewpoint {vid} at ({x:.2f}, {y:.2f}), {len(waypoints)} waypoints:")
for w in waypoints:
    print(f"  range {w.range:.2f} m, heading {w.heading:+.2f} rad, world ({w.x:.2f}, {w.y:.2f})")
gt = neighbor_measure(graph, vid)
print("graph neighbors:", ", ".join(graph.neighbors(vid)))
print("match rate at 0.5/1.0/1.5 m:", match_eval(waypoints, gt.points))
if len(waypoints):
    s = sinkhorn_divergence(DiscreteMeasure.uniform(waypoints.world_xy()), gt, epsilon=0.1)
    print(f"Sinkhorn divergence: {s:.3f} m^2")
