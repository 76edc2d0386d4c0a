"""Run a handful of office episodes under both protocols and print the reports.

    python3 demos/office_episodes.py [n_episodes] [out_dir]
"""
import sys
import tempfile

from vlnsim import worlds
from vlnsim.dataset import episodes_from_samples
from vlnsim.navgraph import graph_stats, sample_trajectories
from vlnsim.runner import NO_MAP, WITH_MAP, EpisodeConfig, run_batch, write_reports, write_runs


def main(n=5, out_dir=None):
    world, graph = worlds.office_scenario()
    stats = graph_stats(graph)
    print(f"office graph: {stats.num_viewpoints} viewpoints, degree {stats.avg_degree:.2f}, "
          f"edge {stats.avg_edge_distance:.2f} m")
    episodes = episodes_from_samples(sample_trajectories(graph, n, seed=0), graph, "office")
    settings = {}
    for label, mode in (("with_map", WITH_MAP), ("no_map", NO_MAP)):
        print(f"running {n} episodes, {label} ...")
        settings[label] = run_batch(world, graph, episodes, EpisodeConfig(mode=mode))
    out_dir = out_dir or tempfile.mkdtemp(prefix="vlnsim-office-")
    for label, runs in settings.items():
        write_runs(out_dir, label, runs)
    print(write_reports(out_dir, settings))
    print(f"logs and reports in {out_dir}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 5, sys.argv[2] if len(sys.argv) > 2 else None)
