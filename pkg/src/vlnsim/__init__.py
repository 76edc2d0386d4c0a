"""2D navigation simulator and evaluation toolkit for instruction-following robots."""
from .errors import *  # noqa: F401,F403
from .gridworld import LaserScan, OccupancyGrid, Pose2D, ray_cast, read_map, simulate_scan, write_map
from .metrics import EpisodeResult, Trajectory, aggregate, evaluate_episode, ndtw
from .navgraph import NavGraph, Viewpoint, build_graph, graph_stats, load_graph, sample_trajectories, shortest_path

__version__ = "0.1.0"
