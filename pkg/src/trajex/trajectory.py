"""Candidate trajectory dictionary: generation, frame transforms, map sampling.

All communicating agents derive the same dictionary from the same config, so a
querying agent only ever transmits its relative pose plus the dictionary id;
responders reconstruct the waypoints locally.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DecodeError
from .geometry import Pose2
from .grid import Costmap, EntropyMap, sample_plane

DICT_MAGIC = 0x58444A54  # "TJDX" little-endian
DICT_VERSION = 1


@dataclass(frozen=True)
class KinematicLimits:
    """Actuation limits the dictionary must respect."""

    v_max: float = 8.0
    a_lin_max: float = 3.0
    a_ang_max: float = 2.0

    def __post_init__(self):
        if self.v_max <= 0.0:
            raise ConfigError(f"v_max must be positive, got {self.v_max}")
        if self.a_lin_max <= 0.0 or self.a_ang_max <= 0.0:
            raise ConfigError("acceleration limits must be positive")


@dataclass(frozen=True)
class TrajectoryDictionary:
    """N candidate trajectories, each a (horizon, 2) waypoint sequence in the ego frame.

    Waypoints start from pose (0, 0, 0) at t=0 (the t=0 point itself is not
    stored).  Index 0 is always the stop trajectory.
    """

    id: int
    waypoints: np.ndarray  # (N, T, 2) float
    params: KinematicLimits
    frame_period: float

    @property
    def count(self) -> int:
        return self.waypoints.shape[0]

    @property
    def horizon(self) -> int:
        return self.waypoints.shape[1]


@dataclass(frozen=True)
class SampledTrajectory:
    """Costs and uncertainties one agent sampled along one candidate."""

    traj_index: int
    cost: np.ndarray         # (T,)
    uncertainty: np.ndarray  # (T,) nats
    valid: np.ndarray        # (T,) bool


def arc_positions(arc_lengths: np.ndarray, curvature: float) -> np.ndarray:
    """Closed-form positions (..., 2) along a constant-curvature arc from (0,0,0).

    x(s) = sin(k s)/k, y(s) = (1 - cos(k s))/k; straight line when k == 0.
    """
    s = np.asarray(arc_lengths, dtype=float)
    if curvature == 0.0:
        return np.stack([s, np.zeros_like(s)], axis=-1)
    return np.stack([np.sin(curvature * s) / curvature,
                     (1.0 - np.cos(curvature * s)) / curvature], axis=-1)


def _feasible(speed: float, curvature: float, limits: KinematicLimits, dt: float) -> bool:
    # Constant (v, k) profiles change neither speed nor angular rate between
    # consecutive waypoints, so only the absolute caps can exclude a combination.
    return abs(speed) <= limits.v_max + 1e-12


def generate_dictionary(n_speeds: int = 10, n_curvatures: int = 8, horizon: int = 15,
                        params: KinematicLimits | None = None, kappa_max: float = 0.4,
                        frame_period: float = 0.5, dict_id: int = 1) -> TrajectoryDictionary:
    """Constant-curvature arcs over the product of speeds and signed curvatures.

    Speeds span [0, v_max] (the zero row is the stop fallback); curvatures span
    [-kappa_max, +kappa_max].  Combinations violating the limits are dropped.
    Ordering is speed-major, so the stop trajectory always lands at index 0.
    """
    params = params or KinematicLimits()
    if n_speeds < 1 or n_curvatures < 1:
        raise ConfigError("need at least one speed and one curvature")
    if horizon < 1:
        raise ConfigError("horizon must be at least 1")
    if frame_period <= 0.0:
        raise ConfigError("frame period must be positive")

    speeds = np.linspace(0.0, params.v_max, n_speeds)
    curvatures = np.linspace(-kappa_max, kappa_max, n_curvatures)
    steps = np.arange(1, horizon + 1) * frame_period

    rows = []
    for v in speeds:
        for k in curvatures:
            if not _feasible(v, k, params, frame_period):
                continue
            rows.append(arc_positions(v * steps, float(k)))
    if not rows:
        raise ConfigError("all speed/curvature combinations were infeasible")
    waypoints = np.stack(rows).astype(float)
    return TrajectoryDictionary(dict_id, waypoints, params, frame_period)


def check_feasibility(dictionary: TrajectoryDictionary) -> bool:
    """Verify consecutive-waypoint speed and angular-rate deltas stay within the limits.

    Only step-to-step changes are constrained; the initial state (a vehicle may
    already be moving and turning at t=0) is not.
    """
    dt = dictionary.frame_period
    pts = np.concatenate([np.zeros((dictionary.count, 1, 2)), dictionary.waypoints], axis=1)
    deltas = np.diff(pts, axis=1)
    speeds = np.linalg.norm(deltas, axis=-1) / dt
    if (speeds > dictionary.params.v_max + 1e-9).any():
        return False
    headings = np.arctan2(deltas[..., 1], deltas[..., 0])
    moving = speeds > 1e-12
    # Carry the previous heading through stationary steps before differencing.
    for i in range(dictionary.count):
        last = 0.0
        for t in range(headings.shape[1]):
            if moving[i, t]:
                last = headings[i, t]
            else:
                headings[i, t] = last
    turn = np.angle(np.exp(1j * np.diff(headings, axis=1)))
    omegas = turn / dt
    alpha = np.abs(np.diff(omegas, axis=1)) / dt
    dv = np.abs(np.diff(speeds, axis=1)) / dt
    return bool((dv <= dictionary.params.a_lin_max + 1e-9).all()
                and (alpha <= dictionary.params.a_ang_max + 1e-9).all())


def transform_trajectory(waypoints: np.ndarray, rel_pose: Pose2) -> np.ndarray:
    """Re-express ego-frame waypoints (..., 2) in the frame `rel_pose` is given in."""
    return rel_pose.transform(waypoints)


def score_trajectories(dictionary: TrajectoryDictionary, rel_pose: Pose2,
                       costmap: Costmap, entropy_map: EntropyMap,
                       observed: np.ndarray | None = None) -> list:
    """Sample cost and uncertainty maps along every candidate, in the map owner's frame.

    Waypoints past the map horizon sample the last available map timestep.
    A waypoint outside the map's interpolable region yields valid=False; so does
    one outside the owner's `observed` field-of-view mask when given (an agent
    does not vouch for space it has never seen).
    """
    if costmap.spec != entropy_map.spec:
        raise ConfigError("cost and entropy maps must share a grid")
    n, t_traj = dictionary.count, dictionary.horizon
    local = transform_trajectory(dictionary.waypoints, rel_pose)  # (N, T, 2)
    costs = np.empty((n, t_traj))
    uncertainties = np.empty((n, t_traj))
    valid = np.empty((n, t_traj), dtype=bool)
    fov = observed.astype(float) if observed is not None else None
    for t in range(1, t_traj + 1):
        mt = min(t, costmap.horizon) - 1
        pts = local[:, t - 1, :]
        c, vc = sample_plane(costmap.spec, costmap.cost[mt], pts)
        u, vu = sample_plane(entropy_map.spec, entropy_map.u[min(t, entropy_map.horizon) - 1], pts)
        ok = vc & vu
        if fov is not None:
            seen, _ = sample_plane(costmap.spec, fov, pts)
            ok &= seen >= 1.0 - 1e-9  # all four surrounding centers observed
        costs[:, t - 1] = c
        uncertainties[:, t - 1] = u
        valid[:, t - 1] = ok
    return [SampledTrajectory(i, costs[i], uncertainties[i], valid[i]) for i in range(n)]


def encode_dictionary(dictionary: TrajectoryDictionary) -> bytes:
    """Versioned little-endian blob for cross-process dictionary agreement checks."""
    head = struct.pack("<IBIHHf3f", DICT_MAGIC, DICT_VERSION, dictionary.id,
                       dictionary.count, dictionary.horizon, dictionary.frame_period,
                       dictionary.params.v_max, dictionary.params.a_lin_max,
                       dictionary.params.a_ang_max)
    body = dictionary.waypoints.astype("<f4").tobytes()
    return head + body


def decode_dictionary(buf: bytes) -> TrajectoryDictionary:
    head_size = struct.calcsize("<IBIHHf3f")
    if len(buf) < head_size:
        raise DecodeError("dictionary blob truncated in header", len(buf))
    magic, version, dict_id, count, horizon, period, v_max, a_lin, a_ang = \
        struct.unpack_from("<IBIHHf3f", buf, 0)
    if magic != DICT_MAGIC:
        raise DecodeError("bad dictionary magic", 0)
    if version != DICT_VERSION:
        raise DecodeError(f"unsupported dictionary version {version}", 4)
    expected = head_size + count * horizon * 2 * 4
    if len(buf) != expected:
        raise DecodeError(f"dictionary blob length {len(buf)} != expected {expected}",
                          min(len(buf), expected))
    pts = np.frombuffer(buf, dtype="<f4", offset=head_size).reshape(count, horizon, 2)
    return TrajectoryDictionary(dict_id, pts.astype(float),
                                KinematicLimits(v_max, a_lin, a_ang), float(period))
