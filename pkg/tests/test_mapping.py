import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import logodds_cell_updates
from vlnsim import worlds
from vlnsim.errors import InvalidPose, InvalidThresholds
from vlnsim.gridworld import FREE, OCCUPIED, UNKNOWN, LaserScan, OccupancyGrid, Pose2D, simulate_scan
from vlnsim.mapping import LogOddsMap, export_grid, integrate_scan, reset


def one_beam(r, range_max=30.0):
    return LaserScan(Pose2D(0, 0, 0), 0.0, 0.0, range_max, np.array([r]))


def test_prior_is_unknown():
    m = LogOddsMap(20, 10)
    assert not m.logodds.any()
    assert np.all(export_grid(m).cells == UNKNOWN)


def test_single_beam_update():
    m = LogOddsMap(100, 4)
    integrate_scan(m, Pose2D(0.025, 0.025, 0.0), one_beam(3.0))
    row = m.logodds[0]
    assert np.allclose(row[:60], -0.4)
    assert row[60] == pytest.approx(0.85)
    assert not row[61:].any()
    assert not m.logodds[1:].any()


def test_no_return_clears_to_range_max():
    m = LogOddsMap(100, 4)
    integrate_scan(m, Pose2D(0.025, 0.025, 0.0), one_beam(2.5, range_max=2.0))
    row = m.logodds[0]
    assert np.allclose(row[:41], -0.4)
    assert not row[41:].any()


def test_out_of_bounds_pose():
    with pytest.raises(InvalidPose):
        integrate_scan(LogOddsMap(10, 10), Pose2D(-1.0, 0.2), one_beam(1.0))


def test_repeated_scans_and_clamp():
    g = worlds.open_room(6.0, 4.0)
    pose = Pose2D(3.0, 2.0, 0.3)
    scan = simulate_scan(g, pose, range_max=10.0)
    m = LogOddsMap.like(g)
    integrate_scan(m, pose, scan)
    occ0 = m.logodds > 0
    free0 = m.logodds < 0
    for k in range(2, 16):
        integrate_scan(m, pose, scan)
        assert np.allclose(m.logodds[occ0], logodds_cell_updates(k, 0))
        assert np.allclose(m.logodds[free0], logodds_cell_updates(0, k))
        if k == 10:
            exported = export_grid(m)
            sensed = occ0 | free0
            assert np.array_equal(exported.cells[sensed], g.cells[sensed])
    assert np.allclose(m.logodds[occ0], 10.0)
    assert np.allclose(m.logodds[free0], -6.0)
    assert m.logodds.max() <= 10.0 and m.logodds.min() >= -10.0


def test_endpoints_are_wall_cells():
    g = worlds.localization_room()
    pose = Pose2D(4.0, 5.0, 1.0)
    m = LogOddsMap.like(g)
    integrate_scan(m, pose, simulate_scan(g, pose))
    assert np.all(g.cells[m.logodds > 0] == OCCUPIED)
    assert np.all(g.cells[m.logodds < 0] == FREE)


def test_export_examples():
    m = LogOddsMap(3, 1)
    m.logodds[0] = [3 * 0.85, 0.0, -2.0]
    assert export_grid(m).cells.tolist() == [[OCCUPIED, UNKNOWN, FREE]]
    with pytest.raises(InvalidThresholds):
        export_grid(m, 1.0, 1.0)


@pytest.mark.parametrize("seed", range(3))
def test_export_vs_per_cell_classifier(seed):
    rng = np.random.default_rng(seed)
    m = LogOddsMap(30, 20)
    m.logodds = rng.uniform(-10, 10, (20, 30))
    occ_t, free_t = rng.uniform(0, 5), rng.uniform(-5, 0)
    cells = export_grid(m, occ_t, free_t).cells
    for r in range(20):
        for c in range(30):
            v = m.logodds[r, c]
            expect = OCCUPIED if v >= occ_t else FREE if v <= free_t else UNKNOWN
            assert cells[r, c] == expect


def test_reset():
    g = worlds.open_room(4.0, 4.0)
    m = LogOddsMap.like(g)
    pose = Pose2D(2.0, 2.0)
    integrate_scan(m, pose, simulate_scan(g, pose))
    reset(m)
    assert not m.logodds.any()
    assert np.all(export_grid(m).cells == UNKNOWN)
    once = m.logodds.copy()
    reset(m)
    assert np.array_equal(m.logodds, once)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_unsensed_cells_stay_zero_and_hits_monotone(seed):
    rng = np.random.default_rng(seed)
    g = worlds.localization_room()
    m = LogOddsMap.like(g)
    touched = np.zeros(g.shape, bool)
    hit_only = None
    for _ in range(4):
        while True:
            pose = Pose2D(rng.uniform(0.5, 9.5), rng.uniform(0.5, 9.5), rng.uniform(-math.pi, math.pi))
            if g.value_at(pose.x, pose.y) == FREE:
                break
        scan = simulate_scan(g, pose, n_beams=181, range_max=rng.uniform(2, 12))
        free, occ = m.scan_cells(pose, scan)
        touched |= free | occ
        before = m.logodds.copy()
        integrate_scan(m, pose, scan)
        assert np.all(m.logodds[occ] >= before[occ])
        hit_only = occ if hit_only is None else hit_only
    assert not m.logodds[~touched].any()
