"""Navigation graphs: construction from a visibility graph, geodesics,
trajectory sampling and per-environment statistics."""
from __future__ import annotations

import heapq
import itertools
import json
import math
import random
from dataclasses import dataclass

import numpy as np

from .errors import InvalidGraph, NoPath, SamplingExhausted

DEFAULT_MAX_EDGE_LENGTH = 5.0
# float sums along different routes may differ in the last bits; geodesics
# are compared after rounding so lexicographic tie-breaking stays stable
_LENGTH_DIGITS = 9


@dataclass(frozen=True)
class Viewpoint:
    id: str
    position: tuple
    included: bool = True
    heading: float = 0.0

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position)
        if len(pos) != 3 or not all(math.isfinite(v) for v in pos):
            raise InvalidGraph(f"viewpoint {self.id!r}: position must be 3 finite numbers")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "id", str(self.id))

    @property
    def xy(self):
        return np.array(self.position[:2])


@dataclass(frozen=True)
class GraphStats:
    num_viewpoints: int
    avg_degree: float
    avg_edge_distance: float


@dataclass(frozen=True)
class SampledPath:
    """A sampled shortest-path episode on a graph."""

    start: str
    goal: str
    path: tuple
    geodesic_length: float


class NavGraph:
    """Immutable undirected graph over viewpoints with Euclidean edge lengths."""

    def __init__(self, viewpoints, edges, max_edge_length=DEFAULT_MAX_EDGE_LENGTH):
        self.viewpoints = {vp.id: vp for vp in viewpoints}
        self._order = [vp.id for vp in viewpoints]
        self.max_edge_length = float(max_edge_length)
        self.edges = frozenset(frozenset(e) for e in edges)
        adj = {vid: {} for vid in self._order if self.viewpoints[vid].included}
        for e in self.edges:
            a, b = sorted(e)
            d = self.distance(a, b)
            adj[a][b] = d
            adj[b][a] = d
        self._adj = {k: dict(sorted(v.items())) for k, v in adj.items()}

    def __contains__(self, vid):
        return vid in self.viewpoints

    def __len__(self):
        return len(self.viewpoints)

    @property
    def included_ids(self):
        return [vid for vid in self._order if self.viewpoints[vid].included]

    def position(self, vid):
        return np.array(self.viewpoints[vid].position)

    def xy(self, vid):
        return self.viewpoints[vid].xy

    def distance(self, a, b):
        pa, pb = self.viewpoints[a].position, self.viewpoints[b].position
        return math.dist(pa, pb)

    def neighbors(self, vid):
        """Neighbor ids sorted lexicographically."""
        self._require(vid)
        return list(self._adj[vid])

    def edge_list(self):
        return sorted(tuple(sorted(e)) for e in self.edges)

    def edge_lengths(self):
        return np.array([self.distance(a, b) for a, b in self.edge_list()])

    def nearest(self, xy):
        """Included viewpoint closest (in the plane) to ``xy``; returns (id, distance)."""
        ids = self.included_ids
        pts = np.array([self.viewpoints[i].position[:2] for i in ids])
        d = np.hypot(pts[:, 0] - xy[0], pts[:, 1] - xy[1])
        k = int(np.argmin(d))
        return ids[k], float(d[k])

    def _require(self, vid):
        if vid not in self.viewpoints:
            raise InvalidGraph(f"unknown viewpoint {vid!r}")
        if not self.viewpoints[vid].included:
            raise InvalidGraph(f"viewpoint {vid!r} is excluded")

    # -- serialization ---------------------------------------------------

    def to_records(self):
        records = []
        for vid in self._order:
            vp = self.viewpoints[vid]
            records.append(
                {
                    "id": vid,
                    "pose": [*vp.position, vp.heading],
                    "included": vp.included,
                    "visible": self.neighbors(vid) if vp.included else [],
                }
            )
        return records

    def dumps(self):
        return json.dumps(self.to_records(), indent=1)


def build_graph(viewpoints, visibility, max_edge_length=DEFAULT_MAX_EDGE_LENGTH) -> NavGraph:
    """Keep visibility pairs between included viewpoints no longer than the cutoff."""
    if not max_edge_length > 0:
        raise ValueError("max_edge_length must be positive")
    seen = {}
    for vp in viewpoints:
        if vp.id in seen:
            raise InvalidGraph(f"duplicate viewpoint id {vp.id!r}")
        seen[vp.id] = vp
    edges = set()
    for pair in visibility:
        a, b = tuple(pair)
        for v in (a, b):
            if v not in seen:
                raise InvalidGraph(f"visibility references unknown viewpoint {v!r}")
        if a == b:
            continue
        if not (seen[a].included and seen[b].included):
            continue
        if math.dist(seen[a].position, seen[b].position) <= max_edge_length:
            edges.add(frozenset((a, b)))
    return NavGraph(list(viewpoints), edges, max_edge_length)


def _record_pose(rec):
    pose = rec.get("pose")
    if pose is None:
        raise InvalidGraph(f"record {rec.get('id')!r} has no pose")
    pose = [float(v) for v in pose]
    if len(pose) == 16:
        # Matterport connectivity exports store a row-major 4x4 transform
        return (pose[3], pose[7], pose[11]), math.atan2(pose[4], pose[0])
    if len(pose) == 4:
        return tuple(pose[:3]), pose[3]
    if len(pose) == 3:
        return tuple(pose), 0.0
    raise InvalidGraph(f"record {rec.get('id')!r}: pose must have 3, 4 or 16 values")


def parse_graph_records(records):
    """Viewpoints plus visibility pairs from graph-file records.

    ``visible`` may be a list of ids or, as in connectivity exports, a list of
    booleans aligned with the record order. Unknown keys are ignored.
    """
    if not isinstance(records, list):
        raise InvalidGraph("graph document must be a list of records")
    viewpoints, visibility = [], set()
    ids = []
    for rec in records:
        if "id" not in rec and "image_id" not in rec:
            raise InvalidGraph("graph record without id")
        ids.append(str(rec.get("id", rec.get("image_id"))))
    for vid, rec in zip(ids, records):
        position, heading = _record_pose(rec)
        viewpoints.append(Viewpoint(vid, position, bool(rec.get("included", True)), heading))
        visible = rec.get("visible", rec.get("unobstructed", []))
        if visible and all(isinstance(v, bool) for v in visible):
            visible = [ids[i] for i, flag in enumerate(visible) if flag]
        for other in visible:
            if str(other) != vid:
                visibility.add(tuple(sorted((vid, str(other)))))
    return viewpoints, visibility


def load_graph(document, max_edge_length=DEFAULT_MAX_EDGE_LENGTH) -> NavGraph:
    """Build a NavGraph from a JSON graph document (text, bytes or parsed list)."""
    if isinstance(document, (str, bytes, bytearray)):
        document = json.loads(document)
    viewpoints, visibility = parse_graph_records(document)
    return build_graph(viewpoints, sorted(visibility), max_edge_length)


def _geodesic_key(d):
    return round(d, _LENGTH_DIGITS)


def _dijkstra(graph, start, goal=None):
    """Label-setting search ordered by (length, id sequence).

    Returns a dict id -> (length, path) for every node reached before goal.
    """
    best = {}
    heap = [(0.0, (start,), 0.0)]
    while heap:
        key, path, d = heapq.heappop(heap)
        u = path[-1]
        if u in best:
            continue
        best[u] = (d, list(path))
        if u == goal:
            break
        for v, w in graph._adj[u].items():
            if v not in best:
                nd = d + w
                heapq.heappush(heap, (_geodesic_key(nd), path + (v,), nd))
    return best


def shortest_path(graph: NavGraph, start, goal):
    """Minimum-length path; ties go to the lexicographically smallest id sequence."""
    graph._require(start)
    graph._require(goal)
    best = _dijkstra(graph, start, goal)
    if goal not in best:
        raise NoPath(f"no path from {start!r} to {goal!r}")
    d, path = best[goal]
    return path, d


def all_shortest_paths_from(graph: NavGraph, start):
    graph._require(start)
    return _dijkstra(graph, start)


def sample_trajectories(
    graph: NavGraph,
    n: int,
    min_length: float = 5.0,
    edge_range=(4, 6),
    seed: int = 0,
    distinct_pairs: bool = True,
):
    """Sample ``n`` shortest-path episodes meeting the length constraints.

    All ordered (start, goal) pairs are shuffled with ``seed`` and filtered in
    that order, so the attempt budget is bounded by the number of pairs.
    """
    lo, hi = edge_range
    ids = graph.included_ids
    if len(ids) < 2:
        raise SamplingExhausted("graph needs at least two included viewpoints")
    tables = {s: all_shortest_paths_from(graph, s) for s in ids}
    pairs = [(s, g) for s, g in itertools.permutations(ids, 2)]
    rng = random.Random(seed)
    rng.shuffle(pairs)
    out = []
    for s, g in pairs:
        if g not in tables[s]:
            continue
        d, path = tables[s][g]
        edges = len(path) - 1
        if d >= min_length and lo <= edges <= hi:
            out.append(SampledPath(s, g, tuple(path), d))
            if len(out) == n:
                return out
    if distinct_pairs or not out:
        raise SamplingExhausted(
            f"only {len(out)} of {n} requested trajectories satisfy the constraints"
        )
    # sampling with replacement once distinct pairs run out
    while len(out) < n:
        out.append(out[rng.randrange(len(out))])
    return out


def graph_stats(graph: NavGraph) -> GraphStats:
    n = len(graph.included_ids)
    if n == 0:
        raise InvalidGraph("graph has no included viewpoints")
    lengths = graph.edge_lengths()
    return GraphStats(
        num_viewpoints=n,
        avg_degree=2.0 * len(graph.edges) / n,
        avg_edge_distance=float(lengths.mean()) if lengths.size else 0.0,
    )
