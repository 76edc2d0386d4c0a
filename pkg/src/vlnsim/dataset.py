"""R2R-style instruction episodes: loading, saving and validation against a graph."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import DatasetFormatError, InvalidGraph, NoPath
from .navgraph import NavGraph, shortest_path

REQUIRED_FIELDS = ("distance", "scan", "path_id", "path", "heading", "instructions")
DISTANCE_TOLERANCE = 0.01


@dataclass(frozen=True)
class InstructionEpisode:
    path_id: object
    scan: str
    path: tuple
    heading: float
    distance: float
    instructions: tuple
    extras: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.path) < 2:
            raise ValueError("episode path needs at least two viewpoints")
        if not self.distance > 0:
            raise ValueError("episode distance must be positive")
        if len(self.instructions) < 1:
            raise ValueError("episode needs at least one instruction")

    @property
    def episode_id(self):
        return str(self.path_id)

    @property
    def start(self):
        return self.path[0]

    @property
    def goal(self):
        return self.path[-1]

    def to_record(self):
        rec = dict(self.extras)
        rec.update(
            distance=self.distance,
            scan=self.scan,
            path_id=self.path_id,
            path=list(self.path),
            heading=self.heading,
            instructions=list(self.instructions),
        )
        return rec


def _parse_record(rec, index):
    if not isinstance(rec, dict):
        raise DatasetFormatError("record is not an object", index)
    missing = [k for k in REQUIRED_FIELDS if k not in rec]
    if missing:
        raise DatasetFormatError(f"missing field(s) {', '.join(missing)}", index)
    path = rec["path"]
    instructions = rec["instructions"]
    if not isinstance(path, list) or not all(isinstance(v, str) for v in path):
        raise DatasetFormatError("path must be a list of viewpoint ids", index)
    if not isinstance(instructions, list) or not all(isinstance(s, str) for s in instructions):
        raise DatasetFormatError("instructions must be a list of strings", index)
    try:
        heading = float(rec["heading"])
        distance = float(rec["distance"])
    except (TypeError, ValueError):
        raise DatasetFormatError("heading and distance must be numbers", index) from None
    extras = {k: v for k, v in rec.items() if k not in REQUIRED_FIELDS}
    try:
        return InstructionEpisode(rec["path_id"], str(rec["scan"]), tuple(path), heading, distance,
                                  tuple(instructions), extras)
    except ValueError as exc:
        raise DatasetFormatError(str(exc), index) from None


def load_dataset(document):
    """Parse a list of records (or a JSON string of one). Unknown keys are kept in ``extras``."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"invalid JSON: {exc}") from None
    if not isinstance(document, list):
        raise DatasetFormatError("dataset must be a list of records")
    return [_parse_record(rec, i) for i, rec in enumerate(document)]


def save_dataset(episodes, indent=None):
    return json.dumps([ep.to_record() for ep in episodes], indent=indent)


def read_dataset(path):
    with open(path, encoding="utf-8") as fh:
        return load_dataset(fh.read())


def write_dataset(episodes, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(save_dataset(episodes, indent=2))


def episodes_from_samples(samples, graph: NavGraph, scan, instructions=("",), start_index=0):
    """Wrap sampled shortest paths as episodes, heading toward the second viewpoint."""
    out = []
    for k, s in enumerate(samples):
        (x0, y0), (x1, y1) = graph.xy(s.path[0]), graph.xy(s.path[1])
        out.append(InstructionEpisode(
            path_id=start_index + k, scan=scan, path=tuple(s.path), heading=math.atan2(y1 - y0, x1 - x0),
            distance=s.geodesic_length, instructions=tuple(instructions),
        ))
    return out


@dataclass
class Violation:
    episode: str
    kind: str
    detail: str


def validate_dataset(episodes, graph: NavGraph, tolerance=DISTANCE_TOLERANCE):
    """List every violation: unknown or excluded ids, non-edges, distance mismatch."""
    report = []
    for ep in episodes:
        eid = ep.episode_id
        ok = True
        for vid in ep.path:
            if vid not in graph:
                report.append(Violation(eid, "unknown_viewpoint", vid))
                ok = False
            elif not graph.viewpoints[vid].included:
                report.append(Violation(eid, "excluded_viewpoint", vid))
                ok = False
        if not ok:
            continue
        for a, b in zip(ep.path[:-1], ep.path[1:]):
            if b not in graph.neighbors(a):
                report.append(Violation(eid, "non_edge", f"{a}->{b}"))
        try:
            _, geo = shortest_path(graph, ep.start, ep.goal)
        except (NoPath, InvalidGraph) as exc:
            report.append(Violation(eid, "unreachable", str(exc)))
            continue
        if not math.isclose(ep.distance, geo, rel_tol=tolerance):
            report.append(Violation(eid, "distance", f"stored {ep.distance:.4f} vs geodesic {geo:.4f}"))
    return report
