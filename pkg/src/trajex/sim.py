"""Lightweight multi-agent BEV simulator.

Generates randomized communication-critical scenarios (straight-line movers
with collision-free speed profiles), renders occlusion-aware 2D lidar and
semantic BEV rasters per agent, and rolls candidate trajectories out against
the scripted ground truth to detect hard collisions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GenerationError, HorizonError
from .geometry import (Pose2, overlap_matrix, points_in_rect, ray_rect_distance,
                       rect_corners, rect_corners_batch, relative_pose, segments_blocked)
from .grid import (ALLO, EGO, NULL, BinaryOccupancy, GridSpec, cell_centers,
                   ego_centered_spec, world_to_grid)

SCENARIO_FORMAT_VERSION = 1

# Default sensing model; none of these are dictated by the planner itself.
DEFAULT_RAYS = 360
DEFAULT_RANGE = 30.0
DEFAULT_FOOTPRINT = (4.5, 2.0)  # car length x width, meters


@dataclass(frozen=True)
class AgentSpec:
    """One scripted agent: footprint, endpoints, speed profile, comm flag."""

    id: int
    length: float
    width: float
    start: Pose2
    goal: tuple
    speed: float
    start_delay: float
    communicating: bool

    def __post_init__(self):
        if self.length <= 0.0 or self.width <= 0.0:
            raise ValueError("footprint must have positive area")
        if self.speed < 0.0:
            raise ValueError("speed must be nonnegative")


@dataclass(frozen=True)
class Obstacle:
    """A static rectangle (wall, parked structure, occluder)."""

    pose: Pose2
    length: float
    width: float


@dataclass(frozen=True)
class Scenario:
    workspace: tuple           # (W, H) meters
    frame_period: float
    duration: int              # frames
    agents: tuple              # of AgentSpec
    static_obstacles: tuple    # of Obstacle
    seed: int
    template: str = "custom"

    def agent(self, agent_id: int) -> AgentSpec:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(f"no agent with id {agent_id}")

    @property
    def communicating_ids(self) -> list:
        return [a.id for a in self.agents if a.communicating]


def agent_pose_at(scenario: Scenario, agent: AgentSpec, frame: int) -> Pose2:
    """Scripted ground truth: wait at start, drive straight to goal, stop there."""
    sx, sy = agent.start.x, agent.start.y
    gx, gy = agent.goal
    dist = math.hypot(gx - sx, gy - sy)
    heading = agent.start.theta if dist < 1e-12 else math.atan2(gy - sy, gx - sx)
    t = frame * scenario.frame_period
    travelled = max(0.0, t - agent.start_delay) * agent.speed
    if dist < 1e-12 or agent.speed == 0.0:
        return Pose2(sx, sy, agent.start.theta)
    frac = min(travelled, dist) / dist
    return Pose2(sx + frac * (gx - sx), sy + frac * (gy - sy), heading)


def scenario_rects(scenario: Scenario, frame: int, exclude: int | None = None):
    """(poses, lengths, widths) of every body at a frame: agents then obstacles."""
    poses, lengths, widths = [], [], []
    for a in scenario.agents:
        if exclude is not None and a.id == exclude:
            continue
        p = agent_pose_at(scenario, a, frame)
        poses.append([p.x, p.y, p.theta])
        lengths.append(a.length)
        widths.append(a.width)
    for ob in scenario.static_obstacles:
        poses.append([ob.pose.x, ob.pose.y, ob.pose.theta])
        lengths.append(ob.length)
        widths.append(ob.width)
    if not poses:
        return np.zeros((0, 3)), np.zeros(0), np.zeros(0)
    return np.asarray(poses), np.asarray(lengths), np.asarray(widths)


# ---------------------------------------------------------------------------
# Scenario randomization

@dataclass
class TemplateParams:
    """Knobs shared by the scenario templates."""

    workspace: tuple = (100.0, 100.0)
    frame_period: float = 0.5
    duration: int = 40
    footprint: tuple = DEFAULT_FOOTPRINT
    speed_range: tuple = (2.0, 8.0)
    delay_range: tuple = (0.0, 5.0)
    min_separation: float = 6.0
    profile_attempts: int = 40
    placement_attempts: int = 200


def _profiles_collide(corners_a: np.ndarray, corners_b: np.ndarray) -> bool:
    """Any-frame strict overlap between two per-frame corner timelines (F, 4, 2)."""
    ca = corners_a.mean(axis=1)
    cb = corners_b.mean(axis=1)
    ra = np.linalg.norm(corners_a - ca[:, None], axis=-1).max()
    rb = np.linalg.norm(corners_b - cb[:, None], axis=-1).max()
    near = np.linalg.norm(ca - cb, axis=-1) <= (ra + rb)
    if not near.any():
        return False
    idx = np.nonzero(near)[0]
    hits = overlap_matrix(corners_a[idx], corners_b[idx])
    return bool(np.diagonal(hits).any())


class _Placement:
    """Incremental collision-free placement of scripted agents."""

    def __init__(self, params: TemplateParams, seed: int):
        self.params = params
        self.scenario_stub = Scenario(params.workspace, params.frame_period,
                                      params.duration, (), (), seed)
        self.frames = np.arange(params.duration)
        self.timelines = []   # corner timelines of committed agents
        self.specs = []

    def timeline(self, spec: AgentSpec) -> np.ndarray:
        poses = np.array([[p.x, p.y, p.theta] for p in
                          (agent_pose_at(self.scenario_stub, spec, int(f)) for f in self.frames)])
        return rect_corners_batch(poses, spec.length, spec.width)

    def conflicts(self, timeline: np.ndarray, obstacles: tuple) -> bool:
        for other in self.timelines:
            if _profiles_collide(timeline, other):
                return True
        for ob in obstacles:
            ob_corners = rect_corners(ob.pose, ob.length, ob.width)
            static = np.broadcast_to(ob_corners, timeline.shape)
            if _profiles_collide(timeline, static):
                return True
        return False

    def commit(self, spec: AgentSpec, timeline: np.ndarray):
        self.specs.append(spec)
        self.timelines.append(timeline)


def _assign_profile(placement: _Placement, rng: np.random.Generator, agent_id: int,
                    start: Pose2, goal: tuple, footprint: tuple, obstacles: tuple,
                    speed_range: tuple, delay_range: tuple) -> AgentSpec | None:
    """Rejection-sample a (speed, delay) that avoids every committed agent."""
    p = placement.params
    for _ in range(p.profile_attempts):
        speed = float(rng.uniform(*speed_range))
        delay = float(rng.uniform(*delay_range))
        spec = AgentSpec(agent_id, footprint[0], footprint[1], start, goal,
                         speed, delay, communicating=False)
        timeline = placement.timeline(spec)
        if not placement.conflicts(timeline, obstacles):
            placement.commit(spec, timeline)
            return spec
    return None


def _sample_crisscross(n_agents: int, rng: np.random.Generator,
                       params: TemplateParams, seed: int) -> tuple:
    """Straight-line movers with randomized endpoints criss-crossing open space."""
    margin = max(params.footprint) / 2.0 + 1.0
    w, h = params.workspace
    placement = _Placement(params, seed)
    starts: list = []
    goals: list = []
    specs = []
    for agent_id in range(n_agents):
        placed = False
        for _ in range(params.placement_attempts):
            sx = rng.uniform(margin, w - margin)
            sy = rng.uniform(margin, h - margin)
            if any(math.hypot(sx - ox, sy - oy) < params.min_separation for ox, oy in starts):
                continue
            gx = rng.uniform(margin, w - margin)
            gy = rng.uniform(margin, h - margin)
            if math.hypot(gx - sx, gy - sy) < params.min_separation:
                continue
            if any(math.hypot(gx - ox, gy - oy) < params.min_separation for ox, oy in goals):
                continue
            heading = math.atan2(gy - sy, gx - sx)
            spec = _assign_profile(placement, rng, agent_id, Pose2(sx, sy, heading),
                                   (gx, gy), params.footprint, (),
                                   params.speed_range, params.delay_range)
            if spec is not None:
                starts.append((sx, sy))
                goals.append((gx, gy))
                specs.append(spec)
                placed = True
                break
        if not placed:
            raise GenerationError(
                f"could not place agent {agent_id} after "
                f"{params.placement_attempts} attempts (seed {seed})")
    return tuple(specs), ()


def _sample_blindcorner(n_agents: int, rng: np.random.Generator,
                        params: TemplateParams, seed: int) -> tuple:
    """An occluded crossing: the ego drives at a corner it cannot see around.

    Agent 0 is the ego approaching an intersection; agent 1 is a long crosser
    hidden behind a static corner block; agent 2 is a parked supporter with a
    clear view down the crossing road.  Remaining agents are static or trailing
    fillers placed by the usual rejection sampler, kept out of the fixture box.
    """
    w, h = params.workspace
    cx, cy = w / 2.0, h / 2.0
    placement = _Placement(params, seed)

    # Corner blocks hug the intersection: near edges at x = cx-4, |y-cy| = 3.
    # From the ego's approach lane the north block hides the crossing road
    # until a southbound body drops below roughly y = cy + 4.5.
    occ_size = rng.uniform(10.0, 14.0)
    north_block = Obstacle(Pose2(cx - 4.0 - occ_size / 2.0, cy + 3.0 + occ_size / 2.0, 0.0),
                           occ_size, occ_size)
    south_block = Obstacle(Pose2(cx - 4.0 - occ_size / 2.0, cy - 3.0 - occ_size / 2.0, 0.0),
                           occ_size, occ_size)
    obstacles = (north_block, south_block)

    specs = []
    # Ego: eastbound, still short of the corner, scripted to arrive late.
    ego_gap = rng.uniform(12.0, 15.0)
    ego_speed = rng.uniform(1.0, 1.4)
    ego_start = Pose2(cx - ego_gap, cy, 0.0)
    ego = AgentSpec(0, *params.footprint, ego_start, (cx + 30.0, cy),
                    ego_speed, 0.0, communicating=True)
    placement.commit(ego, placement.timeline(ego))
    specs.append(ego)

    # Hidden crosser: long, southbound through the intersection, timed (via
    # rejection against the scripted ego) to occupy the crossing early, while
    # fast candidate trajectories would arrive.
    crosser_start = Pose2(cx, cy + rng.uniform(7.5, 10.5), -math.pi / 2.0)
    crosser = _assign_profile(placement, rng, 1, crosser_start, (cx, cy - 25.0),
                              (9.0, 2.4), obstacles,
                              speed_range=(2.4, 3.4), delay_range=(0.0, 1.5))
    if crosser is None:
        raise GenerationError(f"could not time the crossing agent (seed {seed})")
    specs.append(crosser)

    # Supporter: parked northeast of the crossing, unobstructed view of the
    # north road the crosser comes down.
    supporter = AgentSpec(2, *params.footprint,
                          Pose2(cx + rng.uniform(6.0, 9.0), cy + rng.uniform(7.0, 10.0),
                                -math.pi / 2.0),
                          (cx + 7.0, cy + 8.0), 0.0, 0.0, communicating=True)
    placement.commit(supporter, placement.timeline(supporter))
    specs.append(supporter)

    # Fillers: parked agents away from the fixture box, or movers trailing the ego.
    margin = max(params.footprint) / 2.0 + 1.0
    for agent_id in range(3, n_agents):
        placed = False
        for _ in range(params.placement_attempts):
            if rng.random() < 0.5:
                px = rng.uniform(margin, w - margin)
                py = rng.uniform(margin, h - margin)
                if abs(px - cx) < 10.0 and abs(py - cy) < 18.0:
                    continue  # keep the staged corner clear
                spec = AgentSpec(agent_id, *params.footprint,
                                 Pose2(px, py, rng.uniform(-math.pi, math.pi)),
                                 (px, py), 0.0, 0.0, communicating=False)
                timeline = placement.timeline(spec)
                if placement.conflicts(timeline, obstacles):
                    continue
                placement.commit(spec, timeline)
            else:
                back = rng.uniform(14.0, 30.0)
                spec = _assign_profile(placement, rng, agent_id,
                                       Pose2(ego_start.x - back, cy, 0.0), (cx - 10.0, cy),
                                       params.footprint, obstacles,
                                       speed_range=(0.6, min(ego_speed, 1.2)),
                                       delay_range=(2.0, 6.0))
                if spec is None:
                    continue
            specs.append(spec)
            placed = True
            break
        if not placed:
            raise GenerationError(f"could not place filler agent {agent_id} (seed {seed})")
    return tuple(specs), obstacles


TEMPLATES = {
    "crisscross": _sample_crisscross,
    "blindcorner": _sample_blindcorner,
}


def sample_scenario_set(template: str, n_agents: int, n_com_list, seed: int,
                        params: TemplateParams | None = None) -> dict:
    """Randomize one collision-free script and emit one Scenario per n_com value.

    Exactly `n_com` agents are flagged communicating.  The communicating subsets
    are nested across n_com values for a fixed seed (the n_com=1 ego is also in
    the n_com=5 set, and so on), so communication sweeps compare like with like.
    """
    if template not in TEMPLATES:
        raise GenerationError(f"unknown template {template!r}; have {sorted(TEMPLATES)}")
    for n_com in n_com_list:
        if not 1 <= n_com <= n_agents:
            raise GenerationError(f"need 1 <= n_com <= n_agents, got {n_com}/{n_agents}")
    params = params or TemplateParams()
    motion_rng = np.random.default_rng([seed, 0xC0])
    flag_rng = np.random.default_rng([seed, 0xF1])
    specs, obstacles = TEMPLATES[template](n_agents, motion_rng, params, seed)

    if template == "blindcorner":
        # Communication order is part of the fixture: ego first, then the
        # supporter that can actually see around the corner.
        order = [0, 2] + [a.id for a in specs if a.id not in (0, 2)]
    else:
        order = list(flag_rng.permutation(n_agents))
    out = {}
    for n_com in n_com_list:
        chosen = set(order[:n_com])
        agents = tuple(
            AgentSpec(s.id, s.length, s.width, s.start, s.goal, s.speed, s.start_delay,
                      communicating=s.id in chosen)
            for s in specs)
        out[n_com] = Scenario(params.workspace, params.frame_period, params.duration,
                              agents, obstacles, seed, template)
    return out


def sample_scenario(template: str, n_agents: int, n_com: int, seed: int,
                    params: TemplateParams | None = None) -> Scenario:
    """Single-n_com convenience wrapper around sample_scenario_set."""
    return sample_scenario_set(template, n_agents, [n_com], seed, params)[n_com]


# ---------------------------------------------------------------------------
# Sensing

@dataclass(frozen=True)
class LidarFrame:
    """One agent's egocentric sensing at one frame.

    `seg` holds {null, ego, allo} labels only where `visible` is set; `visible`
    marks cell centers within range and line of sight.
    """

    scan: np.ndarray        # (n_rays, 2): angle (ego frame), range
    raster: BinaryOccupancy  # single-step hit raster
    seg: np.ndarray         # (H, W) uint8 class labels
    visible: np.ndarray     # (H, W) bool
    pose: Pose2             # global sensor pose


def render_lidar(scenario: Scenario, agent_id: int, frame: int,
                 spec: GridSpec | None = None, n_rays: int = DEFAULT_RAYS,
                 r_max: float = DEFAULT_RANGE) -> LidarFrame:
    """Ray-cast scan plus BEV rasters from one agent's pose at one frame."""
    if not 0 <= frame < scenario.duration:
        raise HorizonError(f"frame {frame} outside scenario duration {scenario.duration}")
    spec = spec or ego_centered_spec()
    agent = scenario.agent(agent_id)
    pose = agent_pose_at(scenario, agent, frame)

    poses, lengths, widths = scenario_rects(scenario, frame, exclude=agent_id)
    # Everything expressed in the sensor (ego local) frame.
    local_rects = []
    for (px, py, pt), ln, wd in zip(poses, lengths, widths):
        rel = relative_pose(pose, Pose2(px, py, pt))
        local_rects.append((rel, float(ln), float(wd)))

    angles = np.arange(n_rays) * (2.0 * math.pi / n_rays)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    ranges = np.full(n_rays, r_max)
    origin = np.zeros(2)
    for rel, ln, wd in local_rects:
        hit = ray_rect_distance(origin, dirs, rel, ln, wd)
        ranges = np.minimum(ranges, hit)
    ranges = np.minimum(ranges, r_max)
    scan = np.stack([angles, ranges], axis=-1)

    # Hit raster: endpoint cells of returning rays.
    hits = ranges < r_max - 1e-9
    occ = np.zeros(spec.shape, dtype=bool)
    if hits.any():
        coords = np.floor(world_to_grid(spec, dirs[hits] * ranges[hits, None])).astype(int)
        gx, gy = coords[:, 0], coords[:, 1]
        keep = (gx >= 0) & (gx < spec.width) & (gy >= 0) & (gy < spec.height)
        occ[gy[keep], gx[keep]] = True

    centers = cell_centers(spec)  # (H, W, 2) local frame
    dist = np.linalg.norm(centers, axis=-1)
    in_range = dist <= r_max

    # Visibility: line of sight from the sensor, bodies do not hide their own
    # cells.  Each rectangle only shadows the angular cone of its silhouette,
    # so the segment test runs on that cone's cells rather than the whole disk.
    visible = in_range.copy()
    window = np.nonzero(in_range)
    pts = centers[window]
    pt_dist = dist[window]
    pt_ang = np.arctan2(pts[:, 1], pts[:, 0])
    blocked = np.zeros(len(pts), dtype=bool)
    cones = []
    for rel, ln, wd in local_rects:
        corners = rect_corners(rel, ln, wd)
        near = np.linalg.norm(corners, axis=1).min()
        if near > r_max:
            cones.append(None)
            continue
        mu = math.atan2(rel.y, rel.x)
        spread = np.abs(_wrap_diff(np.arctan2(corners[:, 1], corners[:, 0]), mu)).max()
        cand = (np.abs(_wrap_diff(pt_ang, mu)) <= spread + 1e-9) & (pt_dist >= near - 1e-9)
        cones.append(cand)
        idx = np.nonzero(cand)[0]
        if len(idx):
            blocked[idx] |= segments_blocked(origin, pts[idx], rel, ln, wd)
    visible[window] = ~blocked

    seg = np.full(spec.shape, NULL, dtype=np.uint8)
    for (rel, ln, wd), cand in zip(local_rects, cones):
        if cand is None:
            continue
        idx = np.nonzero(cand & ~blocked)[0]
        if not len(idx):
            continue
        inside = points_in_rect(pts[idx], rel, ln, wd)
        idx = idx[inside]
        seg[window[0][idx], window[1][idx]] = ALLO
    own = points_in_rect(pts, Pose2(0.0, 0.0, 0.0), agent.length, agent.width) & ~blocked
    seg[window[0][own], window[1][own]] = EGO

    return LidarFrame(scan, BinaryOccupancy(spec, occ[None]), seg, visible, pose)


def _wrap_diff(angles, reference):
    return (np.asarray(angles) - reference + math.pi) % (2.0 * math.pi) - math.pi


# ---------------------------------------------------------------------------
# Rollout and collision detection

@dataclass(frozen=True)
class RolloutResult:
    hard_collision: bool
    first_collision_frame: int | None


def waypoint_poses(waypoints: np.ndarray, anchor: Pose2) -> np.ndarray:
    """Global (T, 3) poses along ego-frame waypoints; heading follows each segment.

    Stationary steps inherit the previous heading (initially the anchor's).
    """
    pts = np.asarray(waypoints, dtype=float)
    world = anchor.transform(pts)
    prev = np.concatenate([[anchor.xy], world[:-1]], axis=0)
    delta = world - prev
    moving = np.linalg.norm(delta, axis=-1) > 1e-9
    headings = np.empty(len(world))
    last = anchor.theta
    for i in range(len(world)):
        if moving[i]:
            last = math.atan2(delta[i, 1], delta[i, 0])
        headings[i] = last
    return np.concatenate([world, headings[:, None]], axis=1)


def rollout_and_check(scenario: Scenario, ego_id: int, waypoints: np.ndarray,
                      t0: int) -> RolloutResult:
    """Place the ego along a candidate while everyone else follows ground truth."""
    collided = rollout_candidates(scenario, ego_id, np.asarray(waypoints, dtype=float)[None],
                                  t0, first_frames=True)
    frame = collided[1][0]
    return RolloutResult(bool(collided[0][0]), None if frame < 0 else int(frame))


def rollout_candidates(scenario: Scenario, ego_id: int, candidates: np.ndarray,
                       t0: int, first_frames: bool = False):
    """Vectorized hard-collision check of (N, T, 2) ego-frame candidates from t0.

    Returns a bool array (N,), plus first-collision frame indexes (-1 where
    clean) when `first_frames` is set.
    """
    candidates = np.asarray(candidates, dtype=float)
    n, t_steps = candidates.shape[0], candidates.shape[1]
    if t0 + t_steps > scenario.duration - 1:
        raise HorizonError(
            f"rollout to frame {t0 + t_steps} exceeds scenario duration {scenario.duration}")
    ego = scenario.agent(ego_id)
    anchor = agent_pose_at(scenario, ego, t0)

    ego_poses = np.empty((n, t_steps, 3))
    for i in range(n):
        ego_poses[i] = waypoint_poses(candidates[i], anchor)
    ego_corners = rect_corners_batch(ego_poses, ego.length, ego.width)  # (N, T, 4, 2)

    collided = np.zeros(n, dtype=bool)
    first = np.full(n, -1, dtype=int)
    for k in range(t_steps):
        frame = t0 + 1 + k
        poses, lengths, widths = scenario_rects(scenario, frame, exclude=ego_id)
        if len(poses) == 0:
            continue
        other = rect_corners_batch(poses, lengths, widths)  # (M, 4, 2)
        # Coarse prefilter on center distance before the exact axis test.
        ec = ego_corners[:, k].mean(axis=1)
        oc = other.mean(axis=1)
        er = np.linalg.norm(ego_corners[:, k] - ec[:, None], axis=-1).max(axis=1)
        orad = np.linalg.norm(other - oc[:, None], axis=-1).max(axis=1)
        near = np.linalg.norm(ec[:, None] - oc[None], axis=-1) <= (er[:, None] + orad[None])
        rows = np.nonzero(~collided & near.any(axis=1))[0]
        if len(rows) == 0:
            continue
        cols = np.nonzero(near[rows].any(axis=0))[0]
        hits = overlap_matrix(ego_corners[rows, k], other[cols]).any(axis=1)
        newly = rows[hits]
        collided[newly] = True
        first[newly] = np.where(first[newly] < 0, frame, first[newly])
    if first_frames:
        return collided, first
    return collided


# ---------------------------------------------------------------------------
# Scenario files

def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "format_version": SCENARIO_FORMAT_VERSION,
        "template": scenario.template,
        "workspace": list(scenario.workspace),
        "frame_period": scenario.frame_period,
        "duration": scenario.duration,
        "seed": scenario.seed,
        "agents": [
            {
                "id": a.id, "length": a.length, "width": a.width,
                "start": [a.start.x, a.start.y, a.start.theta],
                "goal": list(a.goal), "speed": a.speed,
                "start_delay": a.start_delay, "communicating": a.communicating,
            }
            for a in scenario.agents
        ],
        "static_obstacles": [
            {"pose": [o.pose.x, o.pose.y, o.pose.theta],
             "length": o.length, "width": o.width}
            for o in scenario.static_obstacles
        ],
    }


def scenario_from_dict(data: dict) -> Scenario:
    if data.get("format_version") != SCENARIO_FORMAT_VERSION:
        raise GenerationError(f"unsupported scenario format {data.get('format_version')}")
    agents = tuple(
        AgentSpec(d["id"], d["length"], d["width"], Pose2(*d["start"]),
                  tuple(d["goal"]), d["speed"], d["start_delay"], d["communicating"])
        for d in data["agents"])
    obstacles = tuple(
        Obstacle(Pose2(*d["pose"]), d["length"], d["width"])
        for d in data["static_obstacles"])
    return Scenario(tuple(data["workspace"]), data["frame_period"], data["duration"],
                    agents, obstacles, data["seed"], data.get("template", "custom"))


def save_scenario(path, scenario: Scenario) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2, sort_keys=True))


def load_scenario(path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))
