import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_dtw, dtw_by_enumeration
from vlnsim.errors import EmptyBatch
from vlnsim.metrics import (
    EpisodeResult,
    Trajectory,
    aggregate,
    dtw,
    evaluate_episode,
    format_report,
    ndtw,
    report_json,
    resample,
    similarity_matrix,
)


def polyline(seed, n=8, scale=5.0):
    return np.random.default_rng(seed).uniform(-scale, scale, (n, 2))


def test_resample_segment_spacing():
    pts = resample(np.array([[0.0, 0.0], [9.9, 0.0]]))
    assert len(pts) == 100
    assert np.allclose(np.diff(pts[:, 0]), 0.1)


def test_resample_single_point():
    pts = resample(np.array([[1.0, 2.0]]))
    assert pts.shape == (100, 2) and np.all(pts == [1.0, 2.0])


@pytest.mark.parametrize("seed", range(8))
def test_resample_uniform_arclength(seed):
    poly = polyline(seed)
    pts = resample(poly)
    # recompute each sample's arclength position on the original polyline
    seg = np.hypot(*np.diff(poly, axis=0).T)
    cum = np.concatenate([[0], np.cumsum(seg)])
    s = []
    for p in pts:
        best = None
        for i in range(len(poly) - 1):
            d = poly[i + 1] - poly[i]
            u = np.clip(np.dot(p - poly[i], d) / np.dot(d, d), 0, 1)
            off = np.hypot(*(poly[i] + u * d - p))
            if off < 1e-9:
                best = cum[i] + u * seg[i]
                break
        assert best is not None
        s.append(best)
    assert np.allclose(np.diff(s), cum[-1] / 99, atol=1e-9)
    assert np.array_equal(pts[0], poly[0]) and np.array_equal(pts[-1], poly[-1])


def test_resample_rejects_small_n():
    with pytest.raises(ValueError):
        resample(np.zeros((3, 2)), n=1)


def test_dtw_examples():
    a = polyline(0)
    assert dtw(a, a) == 0.0
    assert dtw([[0, 0]], [[3, 4]]) == pytest.approx(5.0)


@pytest.mark.parametrize("seed", range(10))
def test_dtw_vs_enumeration(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0, 5, (6, 2)).tolist(), rng.uniform(0, 5, (6, 2)).tolist()
    assert dtw(a, b) == pytest.approx(dtw_by_enumeration(a, b), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 25), st.integers(1, 25))
def test_dtw_vs_table_and_reversal(seed, n, m):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-5, 5, (n, 2)), rng.uniform(-5, 5, (m, 2))
    assert dtw(a, b) == pytest.approx(brute_dtw(a.tolist(), b.tolist()), abs=1e-9)
    assert dtw(a, b) == pytest.approx(dtw(a[::-1], b[::-1]), abs=1e-9)


def test_perfect_episode():
    ref = np.array([[0, 0], [3, 0], [3, 4]], float)
    dense = np.vstack([np.linspace(ref[0], ref[1], 31), np.linspace(ref[1], ref[2], 41)[1:]])
    r = evaluate_episode(Trajectory.from_points(dense), ref, 7.0)
    assert (r.sr, r.os, r.ne) == (1.0, 1.0, 0.0)
    assert r.spl == pytest.approx(1.0)
    assert r.ndtw == pytest.approx(1.0, abs=1e-12) and r.sdtw == r.ndtw


def test_agent_never_moves():
    ref = np.array([[0, 0], [10, 0]], float)
    r = evaluate_episode(Trajectory.from_points([[0, 0], [0, 0]]), ref, 10.0)
    assert r.ne == pytest.approx(10.0)
    assert (r.sr, r.spl, r.sdtw, r.tl) == (0.0, 0.0, 0.0, 0.0)
    assert r.ndtw == pytest.approx(math.exp(-500 / 300))
    assert r.ndtw == pytest.approx(0.1889, abs=1e-4)
    assert dtw(resample([[0, 0], [0, 0]]), resample(ref)) == pytest.approx(500.0)


def test_success_boundary_is_strict():
    ref = np.array([[0, 0], [10, 0]], float)
    r = evaluate_episode(Trajectory.from_points([[0, 0], [7, 0]]), ref, 10.0)
    assert r.ne == pytest.approx(3.0) and r.sr == 0.0
    r = evaluate_episode(Trajectory.from_points([[0, 0], [7.001, 0]]), ref, 10.0)
    assert r.sr == 1.0


def test_oracle_success_counts_passing_goal():
    ref = np.array([[0, 0], [10, 0]], float)
    r = evaluate_episode(Trajectory.from_points([[0, 0], [10, 0], [0, 0]]), ref, 10.0)
    assert r.os == 1.0 and r.sr == 0.0


def test_invalid_inputs():
    with pytest.raises(ValueError):
        evaluate_episode(Trajectory.from_points([[0, 0]]), [[1, 1]], 0.0)
    with pytest.raises(ValueError):
        Trajectory([0, 0], [[0, 0, 0], [1, 0, 0]])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.floats(-50, 50), st.floats(-50, 50))
def test_episode_invariants(seed, dx, dy):
    rng = np.random.default_rng(seed)
    ref = np.cumsum(rng.uniform(-3, 3, (5, 2)), axis=0)
    agent = ref + rng.normal(0, rng.uniform(0, 4), ref.shape)
    geo = max(float(np.hypot(*np.diff(ref, axis=0).T).sum()), 1e-3)
    r = evaluate_episode(Trajectory.from_points(agent), ref, geo)
    assert 0.0 <= r.ndtw <= 1.0
    assert r.sdtw <= r.ndtw and r.spl <= r.sr <= r.os
    if r.tl <= geo:
        assert r.spl == r.sr
    shift = np.array([dx, dy])
    assert ndtw(agent + shift, ref + shift) == pytest.approx(r.ndtw, rel=1e-9, abs=1e-12)


def test_ndtw_self_is_one():
    p = polyline(3)
    assert ndtw(p, p) == 1.0


def _result(**kw):
    base = dict(tl=1.0, ne=1.0, sr=1.0, os=1.0, spl=1.0, ndtw=1.0, sdtw=1.0)
    base.update(kw)
    return EpisodeResult(**base)


def test_aggregate_examples():
    one = _result(tl=3.0, ne=2.0, spl=0.5, ndtw=0.8, sdtw=0.8)
    s = aggregate([one])
    assert s["tl"] == 3.0 and s["ne"] == 2.0 and s["spl"] == 50.0 and s["ndtw"] == 80.0
    s = aggregate([_result(), _result(sr=0.0, spl=0.0, sdtw=0.0)])
    assert s["sr"] == 50.0
    with pytest.raises(EmptyBatch):
        aggregate([])


def test_aggregate_vs_recomputation():
    rng = np.random.default_rng(0)
    rs = []
    for _ in range(30):
        sr = float(rng.random() < 0.5)
        nd = rng.random()
        rs.append(_result(tl=rng.uniform(0, 20), ne=rng.uniform(0, 10), sr=sr, os=max(sr, float(rng.random() < 0.5)),
                          spl=sr * rng.random(), ndtw=nd, sdtw=sr * nd, collision=bool(rng.random() < 0.2)))
    s = aggregate(rs)
    for key, scale in (("tl", 1), ("ne", 1), ("sr", 100), ("os", 100), ("spl", 100), ("ndtw", 100), ("sdtw", 100)):
        assert s[key] == pytest.approx(scale * sum(getattr(r, key) for r in rs) / len(rs))
    assert s["collisions"] == sum(r.collision for r in rs)


def test_report_formats():
    rows = {"with_map": aggregate([_result()]), "no_map": aggregate([_result(sr=0.0, spl=0.0, sdtw=0.0)])}
    text = format_report(rows).splitlines()
    assert text[0].split()[:3] == ["Setting", "TL", "(m)"]
    assert [h for h in text[0].split() if h.isupper() and h not in ("TL", "NE")] == ["OS", "SR", "SPL", "SDTW", "NDTW"]
    doc = json.loads(report_json(rows))
    assert doc["columns"] == ["tl", "ne", "os", "sr", "spl", "sdtw", "ndtw"]
    assert doc["rows"]["no_map"]["sr"] == 0.0


def test_similarity_matrix_shape():
    rng = np.random.default_rng(1)
    a = {f"e{i}": np.cumsum(rng.uniform(-1, 1, (6, 2)), axis=0) for i in range(4)}
    b = {k: v + rng.normal(0, 0.5, v.shape) for k, v in a.items()}
    labels, mat = similarity_matrix({"a": a, "b": b, "a2": dict(a)})
    assert labels == ["a", "b", "a2"]
    assert np.allclose(mat, mat.T) and np.all(np.diag(mat) == 1.0)
    assert mat[0, 2] == 1.0 and mat[0, 1] < 1.0


def test_trajectory_jsonl_round_trip():
    t = Trajectory([0.0, 0.1, 0.3], [[0, 0, 0], [1, 0, 0.1], [1, 1, 1.5]])
    text = t.to_jsonl(events={2: "stop"})
    assert json.loads(text.splitlines()[2])["event"] == "stop"
    back = Trajectory.from_jsonl(text)
    assert np.array_equal(back.poses, t.poses) and np.array_equal(back.times, t.times)
    assert t.length == pytest.approx(2.0)
