"""Raster math for egocentric maps.

Carries the probability forecasts through binarization, exact signed Euclidean
distance, cost shaping and per-cell Shannon entropy, plus the world<->grid
indexing and bilinear sampling everything downstream relies on.

Conventions: rasters are indexed [t][y][x] (or [t][class][y][x] for
forecasts); grid coordinates are fractional cell units measured from the
corner of cell (0, 0), so the center of cell (ix, iy) sits at grid
coordinates (ix + 0.5, iy + 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.special import xlogy

from .errors import HorizonError, ShapeError
from .geometry import Pose2

CLASSES = ("null", "ego", "allo")
NULL, EGO, ALLO = 0, 1, 2

PROB_SUM_TOL = 1e-6


@dataclass(frozen=True)
class GridSpec:
    """Discretization of one agent's local map.

    `origin` is the pose of the corner of cell (0, 0) in the owning agent's
    local frame; grid axes follow the origin's heading.
    """

    width: int
    height: int
    resolution: float
    origin: Pose2 = Pose2(0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if self.resolution <= 0.0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")

    @property
    def shape(self) -> tuple:
        return (self.height, self.width)


def ego_centered_spec(width: int = 256, height: int = 256, resolution: float = 0.4) -> GridSpec:
    """Grid centered on the agent, axis-aligned with its heading."""
    origin = Pose2(-width * resolution / 2.0, -height * resolution / 2.0, 0.0)
    return GridSpec(width, height, resolution, origin)


def world_to_grid(spec: GridSpec, points) -> np.ndarray:
    """Local-frame points (..., 2) in meters -> fractional cell coordinates (..., 2)."""
    return spec.origin.inverse_transform(points) / spec.resolution


def grid_to_world(spec: GridSpec, coords) -> np.ndarray:
    """Fractional cell coordinates (..., 2) -> local-frame meters (..., 2)."""
    return spec.origin.transform(np.asarray(coords, dtype=float) * spec.resolution)


@lru_cache(maxsize=32)
def cell_centers(spec: GridSpec) -> np.ndarray:
    """Local-frame coordinates (H, W, 2) of every cell center.  Cached per spec."""
    ix, iy = np.meshgrid(np.arange(spec.width), np.arange(spec.height))
    coords = np.stack([ix + 0.5, iy + 0.5], axis=-1)
    return grid_to_world(spec, coords)


@dataclass(frozen=True)
class OccupancyForecast:
    """Per-future-timestep class probability rasters, shape (T, 3, H, W)."""

    spec: GridSpec
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", p)
        if p.ndim != 4 or p.shape[1] != len(CLASSES) or p.shape[2:] != self.spec.shape:
            raise ShapeError(f"forecast raster {p.shape} does not match spec {self.spec.shape}")
        if p.shape[0] < 1:
            raise HorizonError("forecast horizon must be at least 1")
        if p.min() < -PROB_SUM_TOL or p.max() > 1.0 + PROB_SUM_TOL:
            raise ValueError("probabilities must lie in [0, 1]")
        sums = p.sum(axis=1)
        if np.abs(sums - 1.0).max() > PROB_SUM_TOL:
            raise ValueError("class probabilities must sum to 1 per cell")

    @property
    def horizon(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class BinaryOccupancy:
    """Thresholded occupancy, shape (T, H, W) bool."""

    spec: GridSpec
    occ: np.ndarray

    def __post_init__(self):
        occ = np.asarray(self.occ, dtype=bool)
        object.__setattr__(self, "occ", occ)
        if occ.ndim != 3 or occ.shape[1:] != self.spec.shape:
            raise ShapeError(f"occupancy raster {occ.shape} does not match spec {self.spec.shape}")

    @property
    def horizon(self) -> int:
        return self.occ.shape[0]


@dataclass(frozen=True)
class Costmap:
    """Signed distance (meters) and the derived nonnegative cost, shape (T, H, W).

    cost = max(0, d_sat - distance): zero far from obstacles, above d_sat inside
    them.  The raw signed distance is kept for inspection.
    """

    spec: GridSpec
    distance: np.ndarray
    cost: np.ndarray
    d_sat: float

    @property
    def horizon(self) -> int:
        return self.cost.shape[0]

    @property
    def values(self) -> np.ndarray:
        return self.cost


@dataclass(frozen=True)
class EntropyMap:
    """Per-cell Shannon entropy of the class distribution, nats, shape (T, H, W)."""

    spec: GridSpec
    u: np.ndarray

    @property
    def horizon(self) -> int:
        return self.u.shape[0]

    @property
    def values(self) -> np.ndarray:
        return self.u


def binarize(forecast: OccupancyForecast, theta: float = 0.5) -> BinaryOccupancy:
    """Threshold max(p_ego, p_allo) > theta (strict) into a boolean raster."""
    if not 0.0 < theta < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {theta}")
    moving = np.maximum(forecast.probs[:, EGO], forecast.probs[:, ALLO])
    return BinaryOccupancy(forecast.spec, moving > theta)


def saturation_distance(spec: GridSpec) -> float:
    """Sentinel distance used when a plane is entirely free or entirely occupied."""
    return (spec.width + spec.height) * spec.resolution


def signed_distance(occ: BinaryOccupancy, d_sat: float = 3.0) -> Costmap:
    """Exact signed Euclidean distance between cell centers, plus shaped cost.

    Positive in free space (distance to the nearest occupied cell center),
    negative inside occupancy (distance to the nearest free cell center).
    Uniform planes saturate at +/-(width+height)*resolution.
    """
    if d_sat <= 0.0:
        raise ValueError(f"d_sat must be positive, got {d_sat}")
    spec = occ.spec
    d_inf = saturation_distance(spec)
    dist = np.empty(occ.occ.shape, dtype=float)
    for t, plane in enumerate(occ.occ):
        if not plane.any():
            dist[t] = d_inf
        elif plane.all():
            dist[t] = -d_inf
        else:
            outside = ndimage.distance_transform_edt(~plane, sampling=spec.resolution)
            inside = ndimage.distance_transform_edt(plane, sampling=spec.resolution)
            dist[t] = np.where(plane, -inside, outside)
    cost = np.maximum(0.0, d_sat - dist)
    return Costmap(spec, dist, cost, d_sat)


def entropy(forecast: OccupancyForecast) -> EntropyMap:
    """Shannon entropy across class channels, natural log, with 0*ln(0) = 0."""
    p = forecast.probs
    u = -xlogy(p, p).sum(axis=1)
    return EntropyMap(forecast.spec, np.maximum(u, 0.0))


def sample_plane(spec: GridSpec, plane: np.ndarray, points) -> tuple:
    """Bilinear sample of one (H, W) raster at local-frame points (..., 2).

    Interpolates between the four surrounding cell centers.  Points outside
    the region spanned by cell centers are invalid; no clamping is applied.
    Returns (values, valid); values are meaningless where valid is False.
    """
    coords = world_to_grid(spec, points) - 0.5  # cell-center index space
    u, v = coords[..., 0], coords[..., 1]
    valid = (u >= 0.0) & (u <= spec.width - 1) & (v >= 0.0) & (v <= spec.height - 1)
    u = np.where(valid, u, 0.0)
    v = np.where(valid, v, 0.0)
    ix0 = np.floor(u).astype(int)
    iy0 = np.floor(v).astype(int)
    fx = u - ix0
    fy = v - iy0
    ix1 = np.minimum(ix0 + 1, spec.width - 1)
    iy1 = np.minimum(iy0 + 1, spec.height - 1)
    vals = ((1 - fx) * (1 - fy) * plane[iy0, ix0]
            + fx * (1 - fy) * plane[iy0, ix1]
            + (1 - fx) * fy * plane[iy1, ix0]
            + fx * fy * plane[iy1, ix1])
    return vals, valid


def sample(grid_map, t: int, point) -> tuple:
    """Sample a Costmap or EntropyMap at timestep t (1-based) and a local point.

    Returns (value, valid); valid is False when the point lies outside the
    grid's interpolable region.
    """
    if not 1 <= t <= grid_map.horizon:
        raise HorizonError(f"timestep {t} outside [1, {grid_map.horizon}]")
    vals, valid = sample_plane(grid_map.spec, grid_map.values[t - 1], np.asarray(point, dtype=float))
    return float(vals), bool(valid)


def dump_pgm(path, plane: np.ndarray) -> None:
    """Write one raster plane as binary PGM (P5), linearly scaled to 0..255.

    The scale is recorded in a sidecar text file `<path>.scale.txt` so values
    can be recovered: value = vmin + pixel / 255 * (vmax - vmin).
    """
    path = Path(path)
    plane = np.asarray(plane, dtype=float)
    vmin, vmax = float(plane.min()), float(plane.max())
    span = vmax - vmin if vmax > vmin else 1.0
    pixels = np.round((plane - vmin) / span * 255.0).astype(np.uint8)
    header = f"P5\n{plane.shape[1]} {plane.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + pixels.tobytes())
    sidecar = path.with_name(path.name + ".scale.txt")
    sidecar.write_text(f"vmin {vmin!r}\nvmax {vmax!r}\nlevels 255\n")
