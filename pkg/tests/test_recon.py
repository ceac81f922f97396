import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_phantom, straight_vessel
from femaccess.errors import DegenerateGeometryError, InsufficientExtentError, PipelineError
from femaccess.geometry import ellipse_polygon, matrix_to_quat
from femaccess.phantom import Contour2D, ProbePose, UltrasoundFrame, build_phantom, random_phantom_spec
from femaccess.recon import (Centroid3D, ReconConfig, VesselModel, build_model, clamped_knots, estimate_radius,
                             fit_spline, lift_track, linear_fit, merge_models, parameterize, reconstruct)
from femaccess.tracker import Track, track_sweep
from femaccess.scanplan import CropRegion, crop_cloud, execute_sweep, generate_raster_path
from femaccess.phantom import scan_surface
from oracles import cox_de_boor, penalized_spline_normal_equations, polyline_distance, principal_axis

AXIS = np.array([-1.0, 0.0, 0.0])  # distal (x = 120) to proximal (x = 0)


def one_obs_track(u, v, pose, tid=0, fid=0, r=3.0):
    frame = UltrasoundFrame(fid, pose, 38.0, 40.0, [Contour2D(ellipse_polygon((u, v), (1, 0), r, r))])
    return Track(tid, [(fid, frame.contours[0])]), frame


def test_lift_identity_and_translation():
    t, f = one_obs_track(19.0, 10.0, ProbePose([0, 0, 0], [1, 0, 0, 0]))
    (c,) = lift_track(t, [f])
    assert np.allclose(c.position, [0, 0, 10])
    t, f = one_obs_track(19.0, 10.0, ProbePose([5, 7, 0], [1, 0, 0, 0]))
    assert np.allclose(lift_track(t, [f])[0].position, [5, 7, 10])


def test_lift_yaw_matches_explicit_rotation():
    ang = math.pi / 2
    Rz = np.array([[math.cos(ang), -math.sin(ang), 0], [math.sin(ang), math.cos(ang), 0], [0, 0, 1]])
    pose = ProbePose([1, 2, 3], matrix_to_quat(Rz))
    t, f = one_obs_track(25.0, 12.0, pose)
    expect = np.array([1, 2, 3]) + Rz @ np.array([25.0 - 19.0, 0.0, 12.0])
    assert np.allclose(lift_track(t, [f])[0].position, expect)


def test_lift_missing_pose_names_frame():
    t, _ = one_obs_track(19, 10, ProbePose([0, 0, 0], [1, 0, 0, 0]), fid=42)
    with pytest.raises(PipelineError, match="42"):
        lift_track(t, [])


def test_linear_fit_examples():
    P = np.array([[x, 0.0, 0.0] for x in (0, 3, 7, 12)])
    point, d = linear_fit(P)
    assert np.allclose(np.abs(d), [1, 0, 0]) and np.allclose(point, P.mean(0))
    a, b = np.array([1.0, 2, 3]), np.array([4.0, 6, 3])
    point, d = linear_fit([a, b])
    assert np.allclose(np.abs(d), np.abs(b - a) / 5)
    with pytest.raises(DegenerateGeometryError):
        linear_fit([a, a, a])


def test_linear_fit_cross_pattern_dominant_axis():
    arm1 = [[t, t, 0] for t in np.linspace(-10, 10, 11)]
    arm2 = [[t, -t, 0.5 * t] for t in np.linspace(-4, 4, 9)]
    P = np.array(arm1 + arm2, dtype=float)
    _, d = linear_fit(P)
    assert abs(d @ principal_axis(P)) == pytest.approx(1.0, abs=1e-9)


def test_linear_fit_oriented_by_hint():
    P = np.array([[x, 0.1 * x, 0.0] for x in range(10)], float)
    _, d = linear_fit(P, AXIS)
    assert d @ AXIS > 0


def test_parameterize_examples():
    P = np.array([[0, 0, 0], [10, 0, 0], [20, 0, 0], [10, 5, 0]], float)
    s, order = parameterize(P, np.zeros(3), np.array([1.0, 0, 0]))
    assert s.tolist() == [0, 10, 10, 20]
    assert order.tolist() == [0, 1, 3, 2]
    rng = np.random.default_rng(1)
    Q = rng.normal(size=(50, 3))
    d = np.array([0.6, 0.8, 0.0])
    s, order = parameterize(Q, Q[0], d)
    ref = np.array([(q - Q[0]) @ d for q in Q])
    assert np.allclose(s, np.sort(ref)) and np.allclose(ref[order], s)


def test_spline_reproduces_line():
    s = np.linspace(0, 40, 30)
    Y = np.column_stack([s, 0.5 * s + 1, -10 + 0 * s])
    fit = fit_spline(s, Y, smoothing=1.0)
    q = np.linspace(0, 40, 400)
    assert np.max(np.abs(fit.spline(q) - np.column_stack([q, 0.5 * q + 1, -10 + 0 * q]))) < 1e-6


def test_spline_interpolates_quadratic_with_knots_at_samples():
    s = np.linspace(0, 30, 13)
    Y = np.column_stack([s, 0.02 * s ** 2, -0.01 * (s - 15) ** 2])
    fit = fit_spline(s, Y, smoothing=0.0, breakpoints=s)
    assert np.max(np.abs(fit.spline(s) - Y)) < 1e-6


def test_spline_matches_normal_equations_oracle():
    rng = np.random.default_rng(2)
    s = np.sort(rng.uniform(0, 40, 60))
    Y = np.column_stack([s, np.sin(s / 6), 0.1 * s + rng.normal(0, 0.3, len(s))])
    fit = fit_spline(s, Y, smoothing=1.0, knot_spacing=5.0)
    t = fit.spline.knots
    c_ref = penalized_spline_normal_equations(t, s, Y, 1.0)
    q = np.linspace(s.min(), s.max(), 200)
    ours = fit.spline(q)
    ref = cox_de_boor(t, 3, q) @ c_ref
    assert np.max(np.abs(ours - ref)) < 1e-5


def test_duplicate_stations_are_averaged():
    s = np.array([0, 0, 10, 10, 20, 20], float)
    Y = np.column_stack([s, np.array([1, -1, 1, -1, 1, -1], float), np.zeros(6)])
    fit = fit_spline(s, Y, smoothing=0.0, breakpoints=[0, 20])
    assert np.allclose(fit.spline(np.array([0, 10, 20]))[:, 1], 0.0, atol=1e-9)


def test_short_span_rejected():
    s = np.linspace(0, 8, 10)
    with pytest.raises(InsufficientExtentError, match="insufficient extent"):
        fit_spline(s, np.column_stack([s, s, s]))
    with pytest.raises(InsufficientExtentError):
        fit_spline(s[:3] * 10, np.zeros((3, 3)))


def test_radius_examples():
    assert estimate_radius([3.0, 3.0, 3.0]) == 3.0
    assert estimate_radius([2.0, 3.0, 10.0]) == 3.0
    sq = Contour2D([[0, 0], [10, 0], [10, 10], [0, 10]])
    t = Track(0, [(0, sq)])
    (c,) = lift_track(t, [UltrasoundFrame(0, ProbePose([0, 0, 0], [1, 0, 0, 0]), 38, 40, [sq])])
    assert c.radius == pytest.approx(math.sqrt(100 / math.pi))


def centroids_along(f, s_values, tid, r=3.0, fid0=0):
    return [Centroid3D(np.asarray(f(s), float), r, tid, fid0 + k, "vein") for k, s in enumerate(s_values)]


def line_at(y, z=-15.0):
    return lambda s: [120.0 - s, y, z]


def test_split_vessel_merges_into_one():
    a = centroids_along(line_at(0.0), np.arange(0, 60, 1.0), 0)
    b = centroids_along(lambda s: [120.0 - s, 0.8, -15.2], np.arange(50, 110, 1.0), 1, fid0=100)
    models = [build_model(a, AXIS), build_model(b, AXIS)]
    merged = merge_models(models, 3.0, AXIS)
    assert len(merged) == 1 and merged[0].track_ids == [0, 1]


def test_parallel_vessels_stay_apart_and_merge_is_idempotent():
    a = centroids_along(line_at(-5.0), np.arange(0, 80, 1.0), 0)
    b = centroids_along(line_at(5.0), np.arange(0, 80, 1.0), 1, fid0=100)
    merged = merge_models([build_model(a, AXIS), build_model(b, AXIS)], 3.0, AXIS)
    assert len(merged) == 2
    again = merge_models(merged, 3.0, AXIS)
    assert [m.to_dict() for m in again] == [m.to_dict() for m in merged]


def test_collinear_fragments_with_small_gap_merge():
    a = centroids_along(line_at(0.0), np.arange(0, 40, 1.0), 0)
    b = centroids_along(line_at(0.0), np.arange(41.5, 80, 1.0), 1, fid0=100)
    assert len(merge_models([build_model(a, AXIS), build_model(b, AXIS)], 3.0, AXIS)) == 1
    c = centroids_along(line_at(0.0), np.arange(50, 80, 1.0), 2, fid0=200)
    assert len(merge_models([build_model(a, AXIS), build_model(c, AXIS)], 3.0, AXIS)) == 2


@given(st.permutations(list(range(40))))
def test_stations_independent_of_arrival_order(perm):
    cs = centroids_along(lambda s: [120 - s, 0.02 * s * s / 10, -15], np.arange(0, 40, 1.0), 0)
    ref = build_model(cs, AXIS)
    shuffled = build_model([cs[i] for i in perm], AXIS)
    assert shuffled.to_dict() == ref.to_dict()


def _sweep(spec, noise=None, seed=0):
    ph = build_phantom(spec)
    reg = CropRegion(np.array([[10, -30], [110, -30], [110, 30], [10, 30]], float), (0, 0), (120, 0))
    cloud = crop_cloud(scan_surface(ph, 1.0), reg)
    path = generate_raster_path(cloud, reg, 38.0)
    frames = execute_sweep(ph, path, noise, rng=seed)
    return ph, reg, frames


def test_noiseless_reconstruction_accuracy():
    ph, reg, frames = _sweep(random_phantom_spec(11))
    models = reconstruct(track_sweep(frames), frames, reg.axis3)
    assert len(models) == 2
    for m in models:
        v = min(ph.vessels, key=lambda v: v.nearest(m.sample(1.0)[1])[0].mean())
        _, P = m.sample(1.0)
        assert polyline_distance(P, v.dense).mean() <= 0.5
        assert abs(m.radius - v.nominal_radius) / v.nominal_radius <= 0.05
        assert m.axis @ reg.axis3 > 0


def test_rigid_motion_equivariance():
    ph, reg, frames = _sweep(random_phantom_spec(3))
    tracks = track_sweep(frames)
    ang = 0.7
    R = np.array([[math.cos(ang), -math.sin(ang), 0], [math.sin(ang), math.cos(ang), 0], [0, 0, 1]])
    T = np.array([12.0, -4.0, 2.5])
    moved = []
    for f in frames:
        p = f.pose
        q = ProbePose(R @ p.position + T, matrix_to_quat(R @ p.rotation), p.frame_id, p.timestamp)
        moved.append(UltrasoundFrame(f.frame_id, q, f.image_width_mm, f.image_depth_mm, f.contours,
                                     f.pass_index))
    base = reconstruct(tracks, frames, reg.axis3)
    turned = reconstruct(tracks, moved, R @ reg.axis3)
    assert len(base) == len(turned)
    for a, b in zip(base, turned):
        s = np.linspace(0, a.length, 50)
        assert np.max(np.abs(a.point(s) @ R.T + T - b.point(s))) < 1e-6
        assert a.radius == pytest.approx(b.radius, abs=1e-9)


def test_model_json_round_trip():
    cs = centroids_along(line_at(2.0), np.arange(0, 50, 1.0), 0, r=2.5)
    m = build_model(cs, AXIS)
    m.id = "V0"
    again = VesselModel.from_dict(m.to_dict())
    s = np.linspace(0, m.length, 20)
    assert np.allclose(again.point(s), m.point(s))
    # a centerline-only document is interpolated through its samples
    d = m.to_dict()
    del d["spline"]
    approx = VesselModel.from_dict(d)
    assert np.allclose(approx.point(s), m.point(s), atol=1e-6)


def test_clamped_knots_shape():
    t = clamped_knots([0, 5, 10])
    assert t.tolist() == [0, 0, 0, 0, 5, 10, 10, 10, 10]
