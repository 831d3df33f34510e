import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Polygon

from trajex.geometry import (Pose2, overlap_matrix, points_in_rect, ray_rect_distance,
                             rect_corners, rect_corners_batch, rects_overlap,
                             relative_pose, segments_blocked, wrap_angle)

angles = st.floats(-50.0, 50.0, allow_nan=False)
coords = st.floats(-100.0, 100.0, allow_nan=False)


def shapely_overlap(ca, cb):
    return Polygon(ca).intersection(Polygon(cb)).area > 1e-12


@given(angles)
def test_wrap_angle_range(theta):
    w = wrap_angle(theta)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.sin(w), math.sin(theta), abs_tol=1e-9)
    assert math.isclose(math.cos(w), math.cos(theta), abs_tol=1e-9)


def test_wrap_angle_boundary():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(0.0) == 0.0


def test_pose_transform_hand_case():
    # Quarter turn plus translation: (1, 0) in the child frame lands at (2, 1).
    pose = Pose2(2.0, 0.0, math.pi / 2.0)
    out = pose.transform([1.0, 0.0])
    assert np.allclose(out, [2.0, 1.0], atol=1e-12)


@given(coords, coords, angles, coords, coords)
@settings(max_examples=200)
def test_pose_roundtrip(x, y, theta, px, py):
    pose = Pose2(x, y, theta)
    p = np.array([px, py])
    back = pose.inverse_transform(pose.transform(p))
    assert np.allclose(back, p, atol=1e-9)


@given(coords, coords, angles)
def test_pose_inverse_composes_to_identity(x, y, theta):
    pose = Pose2(x, y, theta)
    ident = pose.compose(pose.inverse())
    assert abs(ident.x) < 1e-9 and abs(ident.y) < 1e-9
    assert abs(wrap_angle(ident.theta)) < 1e-9


def test_relative_pose_recovers_target():
    a = Pose2(1.0, 2.0, 0.3)
    b = Pose2(-4.0, 5.0, -1.2)
    rel = relative_pose(a, b)
    recovered = a.compose(rel)
    assert math.isclose(recovered.x, b.x, abs_tol=1e-12)
    assert math.isclose(recovered.y, b.y, abs_tol=1e-12)
    assert math.isclose(recovered.theta, b.theta, abs_tol=1e-12)


def test_rect_corners_axis_aligned():
    c = rect_corners(Pose2(0.0, 0.0, 0.0), 4.0, 2.0)
    assert np.allclose(sorted(map(tuple, c)), [(-2, -1), (-2, 1), (2, -1), (2, 1)])


def test_rect_corners_batch_matches_single():
    poses = np.array([[1.0, -2.0, 0.7], [0.0, 0.0, -2.2]])
    batch = rect_corners_batch(poses, 3.0, 1.5)
    for i, (x, y, t) in enumerate(poses):
        single = rect_corners(Pose2(x, y, t), 3.0, 1.5)
        assert np.allclose(batch[i], single, atol=1e-12)


@given(st.integers(0, 10_000))
@settings(max_examples=300, deadline=None)
def test_overlap_matches_shapely(seed):
    rng = np.random.default_rng(seed)
    pa = Pose2(*rng.uniform(-5, 5, 2), rng.uniform(-math.pi, math.pi))
    pb = Pose2(*rng.uniform(-5, 5, 2), rng.uniform(-math.pi, math.pi))
    ca = rect_corners(pa, rng.uniform(0.5, 6), rng.uniform(0.5, 4))
    cb = rect_corners(pb, rng.uniform(0.5, 6), rng.uniform(0.5, 4))
    assert rects_overlap(ca, cb) == shapely_overlap(ca, cb)


def test_overlap_strictness_shared_edge():
    ca = rect_corners(Pose2(0.0, 0.0, 0.0), 2.0, 2.0)
    cb = rect_corners(Pose2(2.0, 0.0, 0.0), 2.0, 2.0)  # shares the x=1 edge
    assert not rects_overlap(ca, cb)
    cc = rect_corners(Pose2(2.0 - 1e-9, 0.0, 0.0), 2.0, 2.0)
    assert rects_overlap(ca, cc)


def test_overlap_matrix_shape_and_values():
    a = rect_corners_batch(np.array([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]]), 2.0, 2.0)
    b = rect_corners_batch(np.array([[0.5, 0.5, 0.3], [10.0, 10.0, 0.0]]), 2.0, 2.0)
    m = overlap_matrix(a, b)
    assert m.shape == (2, 2)
    assert m[0, 0] and not m[0, 1] and not m[1, 0] and not m[1, 1]


def test_ray_hits_axis_aligned_face():
    # Rectangle face 5 m down the +x ray.
    pose = Pose2(6.0, 0.0, 0.0)
    d = ray_rect_distance(np.zeros(2), np.array([[1.0, 0.0]]), pose, 2.0, 4.0)
    assert math.isclose(d[0], 5.0, abs_tol=1e-12)


def test_ray_misses_and_backwards():
    pose = Pose2(6.0, 0.0, 0.0)
    d = ray_rect_distance(np.zeros(2), np.array([[0.0, 1.0], [-1.0, 0.0]]), pose, 2.0, 4.0)
    assert np.isinf(d).all()


def test_ray_from_inside():
    d = ray_rect_distance(np.zeros(2), np.array([[1.0, 0.0]]), Pose2(0, 0, 0), 4.0, 4.0)
    assert d[0] == 0.0


def test_segments_blocked_behind_occluder():
    occluder = Pose2(5.0, 0.0, 0.0)
    targets = np.array([[10.0, 0.0], [10.0, 8.0], [5.0, 0.3]])
    blocked = segments_blocked(np.zeros(2), targets, occluder, 2.0, 2.0)
    assert blocked[0]          # straight behind
    assert not blocked[1]      # off to the side
    assert not blocked[2]      # inside the occluder itself: not self-blocked


def test_points_in_rect_rotated():
    pose = Pose2(0.0, 0.0, math.pi / 4.0)
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
    inside = points_in_rect(pts, pose, 4.0, 1.0)
    assert inside[0] and inside[1] and not inside[2]
