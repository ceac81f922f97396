import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import cross_pose
from femaccess.geometry import ellipse_polygon
from femaccess.phantom import Contour2D, UltrasoundFrame
from femaccess.tracker import Track, associate_frame, overlap_cost, solve_assignment, track_sweep
from oracles import brute_force_assignment, shapely_iou


def square(x, y, s=10.0):
    return Contour2D([[x, y], [x + s, y], [x + s, y + s], [x, y + s]])


def circle(u, v, r=3.0):
    return Contour2D(ellipse_polygon((u, v), (1, 0), r, r))


def frame(fid, contours, pass_index=0):
    return UltrasoundFrame(fid, cross_pose(0, 0, frame_id=fid), 38.0, 40.0, list(contours), pass_index)


def test_overlap_cost_examples():
    assert overlap_cost(square(0, 0), square(0, 0)) == 0.0
    assert overlap_cost(square(0, 0), square(20, 0)) == 1.0
    assert overlap_cost(square(0, 0), square(5, 0)) == pytest.approx(2 / 3, abs=1e-12)


ellipses = st.builds(
    lambda u, v, a, b, ang: Contour2D(ellipse_polygon((u, v), (math.cos(ang), math.sin(ang)), a, b)),
    st.floats(5, 30), st.floats(5, 30), st.floats(0.5, 5), st.floats(0.5, 5), st.floats(0, math.pi))


@given(ellipses, ellipses)
def test_overlap_cost_symmetric_bounded_and_matches_shapely(a, b):
    c = overlap_cost(a, b)
    assert 0.0 <= c <= 1.0
    assert c == pytest.approx(overlap_cost(b, a), abs=1e-9)
    assert c == pytest.approx(1 - shapely_iou(a.polygon, b.polygon), abs=1e-9)
    assert overlap_cost(a, a) == pytest.approx(0.0, abs=1e-12)


def test_assignment_examples():
    pairs, total = solve_assignment([[0.2, 0.9], [0.8, 0.3]])
    assert pairs == [(0, 0), (1, 1)] and total == pytest.approx(0.5)
    c = np.ones((3, 3)) - np.eye(3)
    assert solve_assignment(c) == ([(0, 0), (1, 1), (2, 2)], 0.0)
    assert solve_assignment(np.zeros((0, 4))) == ([], 0.0)


def test_assignment_rejects_bad_costs():
    with pytest.raises(ValueError):
        solve_assignment([[1.0, -0.1]])
    with pytest.raises(ValueError):
        solve_assignment([[math.inf, 0.0]])


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_assignment_matches_brute_force(n, m, seed):
    rng = np.random.default_rng(seed)
    c = rng.random((n, m))
    if seed % 3 == 0:
        c = np.round(c * 4) / 4  # many ties
    pairs, total = solve_assignment(c)
    assert len(pairs) == min(n, m)
    assert len({i for i, _ in pairs}) == len({j for _, j in pairs}) == len(pairs)
    assert total == brute_force_assignment(c)


def test_single_track_matched():
    tracks = []
    associate_frame(tracks, frame(0, [circle(19, 15)]))
    a, tracks = associate_frame(tracks, frame(1, [circle(19.5, 15)]))
    assert a.matched == [(0, 0)] and len(tracks) == 1
    assert tracks[0].frame_ids == [0, 1]


def test_low_overlap_spawns_new_track():
    tracks = []
    associate_frame(tracks, frame(0, [square(0, 0)]))
    # IoU = 0.5 / 19.5 < 0.2 forbidden by the 0.8 cost gate
    a, tracks = associate_frame(tracks, frame(1, [square(9.5, 0)]))
    assert a.matched == [] and a.unmatched_contours == [0]
    assert len(tracks) == 2


def test_track_finishes_after_max_misses_plus_one():
    tracks = []
    associate_frame(tracks, frame(0, [circle(19, 15)]), max_misses=5)
    for k in range(1, 6):
        associate_frame(tracks, frame(k, []), max_misses=5)
        assert tracks[0].state == "active"
    associate_frame(tracks, frame(6, []), max_misses=5)
    assert tracks[0].state == "finished"
    associate_frame(tracks, frame(7, [circle(19, 15)]), max_misses=5)
    assert len(tracks[0].observations) == 1 and len(tracks) == 2


def test_finished_track_rejects_observations():
    t = Track(0, [(0, circle(10, 10))], state="finished")
    with pytest.raises(ValueError):
        t.append(1, circle(10, 10))


def test_tie_break_by_lowest_track_then_contour():
    tracks = []
    # two identical tracks meet two identical contours
    associate_frame(tracks, frame(0, [circle(10, 10), circle(10, 10)]))
    a, _ = associate_frame(tracks, frame(1, [circle(10, 10), circle(10, 10)]))
    assert a.matched == [(0, 0), (1, 1)]


@given(st.integers(0, 2**31 - 1))
def test_association_conservation(seed):
    rng = np.random.default_rng(seed)
    tracks = []
    seen = 0
    for fid in range(6):
        cs = [circle(*rng.uniform(5, 33, 2), r=rng.uniform(1, 4)) for _ in range(rng.integers(0, 5))]
        a, tracks = associate_frame(tracks, frame(fid, cs), max_misses=2)
        assert len(a.matched) + len(a.unmatched_contours) == len(cs)
        seen += len(cs)
        for t in tracks:
            assert t.frame_ids == sorted(set(t.frame_ids))
    assert sum(len(t.observations) for t in tracks) == seen


def test_sweep_splits_tracks_at_pass_boundary():
    frames = [frame(k, [circle(19, 15)], pass_index=0 if k < 5 else 1) for k in range(10)]
    tracks = track_sweep(frames)
    assert [t.frame_ids for t in tracks] == [list(range(5)), list(range(5, 10))]
    assert all(t.state == "finished" for t in tracks)


def test_track_json_round_trip():
    frames = [frame(k, [circle(19 + 0.2 * k, 15)]) for k in range(4)]
    (t,) = track_sweep(frames)
    again = Track.from_dict(t.to_dict())
    assert again.to_dict() == t.to_dict()
