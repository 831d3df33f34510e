"""Occupancy forecasting from egocentric BEV history.

Two interchangeable forecasters stand in for a learned predictor: a
constant-velocity baseline that tracks connected components across the last
two aligned frames, and a ground-truth oracle that reads the simulator script
(restricted to what the agent has actually observed).
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, HorizonError, ShapeError
from .geometry import Pose2, points_in_rect, rect_corners, relative_pose
from .grid import (ALLO, EGO, NULL, CLASSES, GridSpec, OccupancyForecast,
                   cell_centers, grid_to_world, world_to_grid)
from .sim import Scenario, agent_pose_at, scenario_rects

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


@dataclass
class ForecastInput:
    """Aligned egocentric history: (label raster, global pose) per past frame.

    Rasters are {null, ego, allo} labels in the ego's frame at the newest
    frame; `t0` is that frame's scenario index and `observed` the union of
    cells the agent has had line of sight to (None means everything).
    """

    history: list
    spec: GridSpec
    horizon: int
    frame_period: float = 0.5
    t0: int = 0
    observed: np.ndarray | None = None

    def __post_init__(self):
        if len(self.history) < 2:
            raise ShapeError("history must contain at least two frames")
        if self.horizon < 1:
            raise HorizonError("forecast horizon must be at least 1")
        for labels, _pose in self.history:
            if labels.shape != self.spec.shape:
                raise ShapeError(
                    f"history raster {labels.shape} does not match spec {self.spec.shape}")


@dataclass(frozen=True)
class ObjectTrack:
    """A matched component: where it is, how fast it moves, how big it is."""

    centroid: np.ndarray   # (2,) meters, local frame
    velocity: np.ndarray   # (2,) meters/s
    extent: tuple          # (dx, dy) bounding box, meters
    label: int             # EGO or ALLO


class Forecaster(ABC):
    """Maps a ForecastInput to an OccupancyForecast; implementations are stateless."""

    @abstractmethod
    def forecast(self, fi: ForecastInput) -> OccupancyForecast:
        raise NotImplementedError


def warp_labels(labels: np.ndarray, src_pose: Pose2, dst_pose: Pose2,
                spec: GridSpec, fill: int = NULL) -> np.ndarray:
    """Resample a label raster from one agent frame into another (nearest cell).

    Cells of the destination grid whose centers fall outside the source grid
    take the fill label.
    """
    centers = cell_centers(spec).reshape(-1, 2)
    in_src = relative_pose(src_pose, dst_pose).transform(centers)
    coords = np.floor(world_to_grid(spec, in_src)).astype(int)
    gx, gy = coords[:, 0], coords[:, 1]
    inside = (gx >= 0) & (gx < spec.width) & (gy >= 0) & (gy < spec.height)
    out = np.full(centers.shape[0], fill, dtype=labels.dtype)
    out[inside] = labels[gy[inside], gx[inside]]
    return out.reshape(spec.shape)


def _component_centroids(labelled: np.ndarray, count: int, spec: GridSpec) -> np.ndarray:
    if count == 0:
        return np.zeros((0, 2))
    cents = ndimage.center_of_mass(np.ones_like(labelled), labelled, range(1, count + 1))
    coords = np.array([[x + 0.5, y + 0.5] for y, x in cents])
    return grid_to_world(spec, coords)


def _tracked_components(prev: np.ndarray, curr: np.ndarray, spec: GridSpec,
                        frame_period: float, gate_radius: float) -> list:
    """(ObjectTrack, component mask) pairs from two aligned label frames."""
    out = []
    for cls in (EGO, ALLO):
        lbl, n = ndimage.label(curr == cls, structure=EIGHT_CONNECTED)
        if n == 0:
            continue
        cents = _component_centroids(lbl, n, spec)
        prev_lbl, n_prev = ndimage.label(prev == cls, structure=EIGHT_CONNECTED)
        prev_cents = _component_centroids(prev_lbl, n_prev, spec)
        for i in range(n):
            velocity = np.zeros(2)
            if n_prev:
                d = np.linalg.norm(prev_cents - cents[i], axis=1)
                j = int(np.argmin(d))
                if d[j] <= gate_radius:
                    velocity = (cents[i] - prev_cents[j]) / frame_period
            mask = lbl == i + 1
            ys, xs = np.nonzero(mask)
            extent = ((xs.max() - xs.min() + 1) * spec.resolution,
                      (ys.max() - ys.min() + 1) * spec.resolution)
            out.append((ObjectTrack(cents[i], velocity, extent, cls), mask.astype(float)))
    return out


def extract_tracks(prev: np.ndarray, curr: np.ndarray, spec: GridSpec,
                   frame_period: float, gate_radius: float = 2.0) -> list:
    """Match connected components between two aligned label frames.

    Components are matched per class by nearest centroid within the gate;
    unmatched current components get zero velocity.
    """
    return [track for track, _ in
            _tracked_components(prev, curr, spec, frame_period, gate_radius)]


def _splat_component(plane: np.ndarray, mask: np.ndarray, shift_cells: np.ndarray,
                     sigma_cells: float) -> None:
    """Add a translated, Gaussian-dilated copy of `mask` into `plane`.

    Works on a window just large enough for the blur support, which keeps the
    per-component cost independent of the grid size.  Mass pushed past the
    grid border is dropped.
    """
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return
    dx, dy = float(shift_cells[0]), float(shift_cells[1])
    ox, oy = int(np.floor(dx)), int(np.floor(dy))
    fx, fy = dx - ox, dy - oy
    pad = int(np.ceil(4.0 * sigma_cells)) + 2
    y0, y1 = ys.min(), ys.max() + 1
    x0, x1 = xs.min(), xs.max() + 1
    sub = np.zeros((y1 - y0 + 2 * pad, x1 - x0 + 2 * pad))
    sub[pad:pad + (y1 - y0), pad:pad + (x1 - x0)] = mask[y0:y1, x0:x1]
    if fx or fy:
        sub = ndimage.shift(sub, (fy, fx), order=1, mode="constant", cval=0.0,
                            prefilter=False)
    if sigma_cells > 0.0:
        sub = ndimage.gaussian_filter(sub, sigma_cells, mode="constant", cval=0.0)
    top = y0 - pad + oy
    left = x0 - pad + ox
    h, w = plane.shape
    sy0, sy1 = max(0, -top), min(sub.shape[0], h - top)
    sx0, sx1 = max(0, -left), min(sub.shape[1], w - left)
    if sy0 >= sy1 or sx0 >= sx1:
        return
    plane[top + sy0:top + sy1, left + sx0:left + sx1] += sub[sy0:sy1, sx0:sx1]


class ConstantVelocityForecaster(Forecaster):
    """Propagates tracked components linearly and dilates them with a growing blur.

    Forecasts hedge against the unmodeled world: a uniform mixture whose weight
    grows with the forecast step keeps far-future "empty" cells from being
    reported as certainties (unseen agents keep arriving in open space, and
    the fusion stage weights votes by inverse entropy).
    """

    def __init__(self, sigma0: float = 0.4, sigma_growth: float = 0.15,
                 gate_radius: float = 2.0, ignorance_growth: float = 0.04,
                 ignorance_max: float = 0.3):
        if sigma0 <= 0.0 or sigma_growth < 0.0:
            raise ConfigError("sigma0 must be positive and sigma_growth nonnegative")
        if not 0.0 <= ignorance_max < 1.0:
            raise ConfigError("ignorance_max must lie in [0, 1)")
        self.sigma0 = sigma0
        self.sigma_growth = sigma_growth
        self.gate_radius = gate_radius
        self.ignorance_growth = ignorance_growth
        self.ignorance_max = ignorance_max

    def forecast(self, fi: ForecastInput) -> OccupancyForecast:
        spec = fi.spec
        prev, _ = fi.history[-2]
        curr, _ = fi.history[-1]
        tracked = _tracked_components(prev, curr, spec, fi.frame_period, self.gate_radius)

        probs = np.zeros((fi.horizon, len(CLASSES)) + spec.shape)
        for t in range(1, fi.horizon + 1):
            sigma_cells = (self.sigma0 + self.sigma_growth * t) / spec.resolution
            score = np.zeros((len(CLASSES),) + spec.shape)
            for track, mask in tracked:
                target = track.centroid + track.velocity * fi.frame_period * t
                shift = world_to_grid(spec, target) - world_to_grid(spec, track.centroid)
                _splat_component(score[track.label], mask, shift, sigma_cells)
            moving = np.clip(score[EGO], 0.0, 1.0) + np.clip(score[ALLO], 0.0, 1.0)
            score[EGO] = np.clip(score[EGO], 0.0, 1.0)
            score[ALLO] = np.clip(score[ALLO], 0.0, 1.0)
            score[NULL] = np.maximum(0.0, 1.0 - moving)
            total = score.sum(axis=0)
            lam = min(self.ignorance_growth * t, self.ignorance_max)
            probs[t - 1] = (1.0 - lam) * (score / total) + lam / len(CLASSES)
        return OccupancyForecast(spec, probs)


class GroundTruthForecaster(Forecaster):
    """One-hot future occupancy read from the simulator script.

    Only cells the agent has observed carry labels; everything else stays null,
    so the oracle never reports what the agent could not have seen.
    """

    def __init__(self, scenario: Scenario, agent_id: int):
        self.scenario = scenario
        self.agent_id = agent_id

    def forecast(self, fi: ForecastInput) -> OccupancyForecast:
        if fi.t0 + fi.horizon > self.scenario.duration - 1:
            raise HorizonError(
                f"forecast to frame {fi.t0 + fi.horizon} exceeds duration {self.scenario.duration}")
        spec = fi.spec
        ego = self.scenario.agent(self.agent_id)
        anchor = agent_pose_at(self.scenario, ego, fi.t0)
        labels = np.empty((fi.horizon,) + spec.shape, dtype=np.uint8)
        for t in range(1, fi.horizon + 1):
            labels[t - 1] = render_true_labels(self.scenario, self.agent_id, fi.t0 + t,
                                               spec, anchor)
        if fi.observed is not None:
            labels[:, ~fi.observed] = NULL
        probs = np.zeros((fi.horizon, len(CLASSES)) + spec.shape)
        for c in range(len(CLASSES)):
            probs[:, c] = labels == c
        return OccupancyForecast(spec, probs)


def _fill_rect(labels: np.ndarray, spec: GridSpec, rel_pose: Pose2,
               length: float, width: float, value: int) -> None:
    """Label cells whose centers lie inside a rectangle, touching only its window."""
    corners = world_to_grid(spec, rect_corners(rel_pose, length, width))
    x0 = max(0, int(np.floor(corners[:, 0].min())) - 1)
    x1 = min(spec.width, int(np.ceil(corners[:, 0].max())) + 1)
    y0 = max(0, int(np.floor(corners[:, 1].min())) - 1)
    y1 = min(spec.height, int(np.ceil(corners[:, 1].max())) + 1)
    if x0 >= x1 or y0 >= y1:
        return
    window = cell_centers(spec)[y0:y1, x0:x1]
    inside = points_in_rect(window, rel_pose, length, width)
    labels[y0:y1, x0:x1][inside] = value


def render_true_labels(scenario: Scenario, agent_id: int, frame: int, spec: GridSpec,
                       anchor: Pose2 | None = None) -> np.ndarray:
    """Omniscient {null, ego, allo} raster of frame `frame` in the agent's frame.

    `anchor` fixes the reference pose (defaults to the agent's pose at that
    frame); static obstacles count as allo occupancy.
    """
    agent = scenario.agent(agent_id)
    anchor = anchor or agent_pose_at(scenario, agent, frame)
    labels = np.full(spec.shape, NULL, dtype=np.uint8)
    poses, lengths, widths = scenario_rects(scenario, frame, exclude=agent_id)
    for (px, py, pt), ln, wd in zip(poses, lengths, widths):
        rel = relative_pose(anchor, Pose2(px, py, pt))
        _fill_rect(labels, spec, rel, float(ln), float(wd), ALLO)
    ego_rel = relative_pose(anchor, agent_pose_at(scenario, agent, frame))
    _fill_rect(labels, spec, ego_rel, agent.length, agent.width, EGO)
    return labels


def make_forecaster(name: str, scenario: Scenario | None = None,
                    agent_id: int | None = None, **kwargs) -> Forecaster:
    """Config-file selection: 'cv_baseline' or 'oracle'."""
    if name == "cv_baseline":
        return ConstantVelocityForecaster(**kwargs)
    if name == "oracle":
        if scenario is None or agent_id is None:
            raise ConfigError("the oracle forecaster needs a scenario and agent id")
        return GroundTruthForecaster(scenario, agent_id)
    raise ConfigError(f"unknown forecaster {name!r}; expected 'cv_baseline' or 'oracle'")
