import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajex.errors import ConfigError, DecodeError
from trajex.geometry import Pose2
from trajex.grid import BinaryOccupancy, EntropyMap, GridSpec, signed_distance
from trajex.trajectory import (KinematicLimits, TrajectoryDictionary, arc_positions,
                               check_feasibility, decode_dictionary, encode_dictionary,
                               generate_dictionary, score_trajectories,
                               transform_trajectory)


def euler_arc(v, kappa, horizon, dt, substeps=20_000):
    """Fine forward-Euler integration of the unicycle as an independent oracle."""
    x = y = theta = 0.0
    h = dt / substeps
    out = []
    for _ in range(horizon):
        for _ in range(substeps):
            x += v * math.cos(theta) * h
            y += v * math.sin(theta) * h
            theta += v * kappa * h
        out.append((x, y))
    return np.array(out)


def test_default_dictionary_is_80_by_15():
    d = generate_dictionary()
    assert d.count == 80
    assert d.horizon == 15
    assert d.waypoints.shape == (80, 15, 2)


def test_stop_trajectory_at_index_zero():
    d = generate_dictionary()
    assert np.all(d.waypoints[0] == 0.0)


def test_arc_formula_hand_case():
    # v=1 m/s, kappa=0.5, dt=0.5 -> first waypoint by the closed form.
    pts = arc_positions(np.array([0.5]), 0.5)
    assert math.isclose(pts[0, 0], math.sin(0.25) / 0.5, abs_tol=1e-12)
    assert math.isclose(pts[0, 1], (1.0 - math.cos(0.25)) / 0.5, abs_tol=1e-12)


@pytest.mark.parametrize("v,kappa", [(1.0, 0.5), (3.0, -0.3), (6.0, 0.0), (2.0, 0.4)])
def test_arc_matches_euler_integration(v, kappa):
    horizon, dt = 8, 0.5
    closed = arc_positions(v * np.arange(1, horizon + 1) * dt, kappa)
    euler = euler_arc(v, kappa, horizon, dt)
    assert np.abs(closed - euler).max() < 1e-3


def test_dictionary_determinism():
    a = generate_dictionary(n_speeds=7, n_curvatures=5, horizon=12)
    b = generate_dictionary(n_speeds=7, n_curvatures=5, horizon=12)
    assert a.waypoints.tobytes() == b.waypoints.tobytes()


def test_dictionary_feasibility():
    assert check_feasibility(generate_dictionary())
    assert check_feasibility(generate_dictionary(n_speeds=4, n_curvatures=3, horizon=6))


def test_dictionary_rejects_bad_params():
    with pytest.raises(ConfigError):
        KinematicLimits(v_max=0.0)
    with pytest.raises(ConfigError):
        generate_dictionary(n_speeds=0)
    with pytest.raises(ConfigError):
        generate_dictionary(horizon=0)


def test_transform_identity():
    d = generate_dictionary(n_speeds=3, n_curvatures=3, horizon=4)
    out = transform_trajectory(d.waypoints, Pose2(0.0, 0.0, 0.0))
    assert np.allclose(out, d.waypoints)


def test_transform_hand_rotation():
    out = transform_trajectory(np.array([[1.0, 0.0]]), Pose2(2.0, 0.0, math.pi / 2.0))
    assert np.allclose(out, [[2.0, 1.0]], atol=1e-12)


@given(st.integers(0, 10_000))
@settings(max_examples=200)
def test_transform_roundtrip_and_isometry(seed):
    rng = np.random.default_rng(seed)
    rel = Pose2(*rng.uniform(-50, 50, 2), rng.uniform(-math.pi, math.pi))
    pts = rng.uniform(-30, 30, (6, 2))
    there = transform_trajectory(pts, rel)
    back = transform_trajectory(there, rel.inverse())
    assert np.abs(back - pts).max() < 1e-9
    d_before = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d_after = np.linalg.norm(there[:, None] - there[None], axis=-1)
    assert np.abs(d_before - d_after).max() < 1e-9


def free_maps(spec, horizon):
    occ = BinaryOccupancy(spec, np.zeros((horizon,) + spec.shape, dtype=bool))
    cm = signed_distance(occ)
    em = EntropyMap(spec, np.zeros((horizon,) + spec.shape))
    return cm, em


def test_score_all_free_map():
    spec = GridSpec(64, 64, 0.5, origin=Pose2(-16.0, -16.0, 0.0))
    cm, em = free_maps(spec, 5)
    d = generate_dictionary(n_speeds=4, n_curvatures=3, horizon=10,
                            params=KinematicLimits(v_max=3.0))
    sampled = score_trajectories(d, Pose2(0, 0, 0), cm, em)
    assert len(sampled) == d.count
    for s in sampled:
        assert s.cost.shape == (10,)
        assert (s.cost[s.valid] == 0.0).all()
        assert s.valid.all()  # 3 m/s for 5 s stays well inside a 32 m grid


def test_score_out_of_grid_is_invalid():
    spec = GridSpec(8, 8, 0.5, origin=Pose2(-2.0, -2.0, 0.0))  # 4 m x 4 m
    cm, em = free_maps(spec, 5)
    d = generate_dictionary(n_speeds=3, n_curvatures=3, horizon=10,
                            params=KinematicLimits(v_max=6.0))
    sampled = score_trajectories(d, Pose2(0, 0, 0), cm, em)
    fast_straight = max(sampled, key=lambda s: np.linalg.norm(d.waypoints[s.traj_index][-1]))
    assert not fast_straight.valid.all()


def test_score_peak_at_obstacle_crossing():
    spec = GridSpec(64, 64, 0.5, origin=Pose2(-16.0, -16.0, 0.0))
    occ = np.zeros((5, 64, 64), dtype=bool)
    # Block a patch around x = +6 m on the ego's path at every map step.
    occ[:, 30:34, 43:46] = True
    cm = signed_distance(BinaryOccupancy(spec, occ))
    em = EntropyMap(spec, np.zeros((5, 64, 64)))
    waypoints = np.stack([np.linspace(1.0, 12.0, 12), np.zeros(12)], axis=1)[None]
    d = TrajectoryDictionary(1, waypoints, KinematicLimits(), 0.5)
    s = score_trajectories(d, Pose2(0, 0, 0), cm, em)[0]
    crossing = np.argmin(np.abs(waypoints[0, :, 0] - 6.0))
    assert s.cost.argmax() == crossing
    # Manual bilinear cross-check at the crossing waypoint.
    from trajex.grid import sample
    v, ok = sample(cm, 5, waypoints[0, crossing])
    assert ok and math.isclose(v, s.cost[crossing], rel_tol=1e-12)


def test_score_clamps_beyond_map_horizon():
    spec = GridSpec(32, 32, 0.5, origin=Pose2(-8.0, -8.0, 0.0))
    occ = np.zeros((3, 32, 32), dtype=bool)
    occ[2, 16, 20] = True  # only the last map step has an obstacle
    cm = signed_distance(BinaryOccupancy(spec, occ))
    em = EntropyMap(spec, np.zeros((3, 32, 32)))
    waypoints = np.tile(np.array([[2.0, 0.2]]), (6, 1))[None]
    d = TrajectoryDictionary(1, waypoints, KinematicLimits(), 0.5)
    s = score_trajectories(d, Pose2(0, 0, 0), cm, em)[0]
    assert np.allclose(s.cost[2:], s.cost[2])  # steps 3..6 reuse map step 3


def test_blob_roundtrip():
    d = generate_dictionary(n_speeds=5, n_curvatures=4, horizon=9, dict_id=7)
    blob = encode_dictionary(d)
    back = decode_dictionary(blob)
    assert back.id == 7
    assert back.count == d.count and back.horizon == d.horizon
    assert np.array_equal(back.waypoints, d.waypoints.astype(np.float32).astype(float))
    assert math.isclose(back.params.v_max, d.params.v_max, rel_tol=1e-6)


def test_blob_rejects_corruption():
    blob = encode_dictionary(generate_dictionary(n_speeds=3, n_curvatures=3, horizon=4))
    with pytest.raises(DecodeError):
        decode_dictionary(blob[:10])
    with pytest.raises(DecodeError):
        decode_dictionary(b"XXXX" + blob[4:])
    with pytest.raises(DecodeError):
        decode_dictionary(blob + b"\x00")
