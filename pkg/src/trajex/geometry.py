"""Planar rigid-body geometry: poses, frame changes, oriented rectangles, rays.

Everything here is a pure function of its inputs.  Rectangles are represented
either as (pose, length, width) triples or as (..., 4, 2) corner arrays in
counter-clockwise order; the batch helpers broadcast over leading axes so the
simulator and rollout checker can test many placements at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TAU = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Normalize an angle to the half-open interval (-pi, pi]."""
    return -((-theta + math.pi) % TAU - math.pi)


@dataclass(frozen=True)
class Pose2:
    """A rigid 2D pose (x, y, heading).  Heading is stored wrapped to (-pi, pi]."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def transform(self, points) -> np.ndarray:
        """Map points (..., 2) from this pose's frame into the parent frame."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation().T + self.xy

    def inverse_transform(self, points) -> np.ndarray:
        """Map points (..., 2) from the parent frame into this pose's frame."""
        pts = np.asarray(points, dtype=float)
        return (pts - self.xy) @ self.rotation()

    def compose(self, other: "Pose2") -> "Pose2":
        """Pose of `other` (expressed in this frame) re-expressed in the parent frame."""
        px, py = self.transform([other.x, other.y])
        return Pose2(px, py, self.theta + other.theta)

    def inverse(self) -> "Pose2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)


def relative_pose(reference: Pose2, target: Pose2) -> Pose2:
    """Pose of `target` expressed in `reference`'s frame (both given in a common frame)."""
    return reference.inverse().compose(target)


# Corner offsets in the rectangle's own frame, CCW starting front-left.
_CORNER_SIGNS = np.array([[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]])


def rect_corners(pose: Pose2, length: float, width: float) -> np.ndarray:
    """Corners (4, 2) of an oriented rectangle centered on `pose`, CCW."""
    local = _CORNER_SIGNS * [length / 2.0, width / 2.0]
    return pose.transform(local)


def rect_corners_batch(xyt: np.ndarray, length, width) -> np.ndarray:
    """Corners (..., 4, 2) for poses given as an (..., 3) array of (x, y, theta)."""
    xyt = np.asarray(xyt, dtype=float)
    half = np.stack(np.broadcast_arrays(np.asarray(length) / 2.0, np.asarray(width) / 2.0), axis=-1)
    local = _CORNER_SIGNS * half[..., None, :]
    c, s = np.cos(xyt[..., 2]), np.sin(xyt[..., 2])
    rot = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], axis=-2)
    return np.einsum("...ij,...kj->...ki", rot, local) + xyt[..., None, :2]


def points_in_rect(points: np.ndarray, pose: Pose2, length: float, width: float) -> np.ndarray:
    """Boolean mask of points (..., 2) strictly or boundary-inclusively inside the rectangle."""
    local = pose.inverse_transform(points)
    return (np.abs(local[..., 0]) <= length / 2.0) & (np.abs(local[..., 1]) <= width / 2.0)


def _axes_of(corners: np.ndarray) -> np.ndarray:
    """Two unique edge-normal axes (..., 2, 2) of rectangles given as corner arrays."""
    e0 = corners[..., 1, :] - corners[..., 0, :]
    e1 = corners[..., 2, :] - corners[..., 1, :]
    axes = np.stack([e0, e1], axis=-2)
    norms = np.linalg.norm(axes, axis=-1, keepdims=True)
    return axes / np.where(norms > 0.0, norms, 1.0)


def rects_overlap(corners_a: np.ndarray, corners_b: np.ndarray) -> bool:
    """Strict positive-area overlap of two oriented rectangles (separating-axis test).

    Rectangles that merely touch along an edge or corner do NOT overlap.
    """
    return bool(overlap_matrix(corners_a[None], corners_b[None])[0, 0])


def overlap_matrix(corners_a: np.ndarray, corners_b: np.ndarray) -> np.ndarray:
    """Pairwise strict-overlap matrix (A, B) for corner arrays (A, 4, 2) and (B, 4, 2)."""
    corners_a = np.asarray(corners_a, dtype=float)
    corners_b = np.asarray(corners_b, dtype=float)
    axes_a = _axes_of(corners_a)  # (A, 2, 2)
    axes_b = _axes_of(corners_b)  # (B, 2, 2)
    proj_aa = np.einsum("acx,anx->acn", corners_a, axes_a)  # (A, 4, 2) corners on own axes
    proj_ba = np.einsum("bcx,anx->abcn", corners_b, axes_a)  # (A, B, 4, 2)
    proj_ab = np.einsum("acx,bnx->abcn", corners_a, axes_b)  # (A, B, 4, 2)
    proj_bb = np.einsum("bcx,bnx->bcn", corners_b, axes_b)  # (B, 4, 2)

    sep_on_a = (proj_aa.max(1)[:, None] <= proj_ba.min(2)) | (proj_ba.max(2) <= proj_aa.min(1)[:, None])
    sep_on_b = (proj_bb.max(1)[None] <= proj_ab.min(2)) | (proj_ab.max(2) <= proj_bb.min(1)[None])
    separated = sep_on_a.any(-1) | sep_on_b.any(-1)
    return ~separated


def ray_rect_distance(origin: np.ndarray, dirs: np.ndarray, pose: Pose2,
                      length: float, width: float) -> np.ndarray:
    """First-hit distances of rays against one oriented rectangle (slab method).

    `origin` is (2,), `dirs` is (R, 2) unit directions; returns (R,) distances,
    inf where a ray misses.  Rays starting inside the rectangle hit at 0.
    """
    o = pose.inverse_transform(origin)
    d = np.asarray(dirs, dtype=float) @ pose.rotation()
    half = np.array([length / 2.0, width / 2.0])
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    near = np.minimum(t1, t2)
    far = np.maximum(t1, t2)
    # Rays parallel to a slab axis: inside the slab -> (-inf, inf), outside -> miss.
    parallel = d == 0.0
    inside = np.abs(o) <= half
    near = np.where(parallel, np.where(inside, -np.inf, np.inf), near)
    far = np.where(parallel, np.where(inside, np.inf, -np.inf), far)
    t_enter = near.max(axis=-1)
    t_exit = far.min(axis=-1)
    hit = (t_enter <= t_exit) & (t_exit >= 0.0)
    return np.where(hit, np.maximum(t_enter, 0.0), np.inf)


def segments_blocked(origin: np.ndarray, targets: np.ndarray, pose: Pose2,
                     length: float, width: float, slack: float = 1e-9) -> np.ndarray:
    """Whether the open segment origin->target crosses the rectangle before the target.

    Targets strictly inside the rectangle are not blocked by it (a body does not
    occlude its own cells); callers exclude the containing body via this rule.
    """
    targets = np.asarray(targets, dtype=float)
    delta = targets - np.asarray(origin, dtype=float)
    dist = np.linalg.norm(delta, axis=-1)
    safe = np.where(dist > 0.0, dist, 1.0)
    dirs = delta / safe[..., None]
    t_hit = ray_rect_distance(origin, dirs.reshape(-1, 2), pose, length, width)
    t_hit = t_hit.reshape(dist.shape)
    contained = points_in_rect(targets, pose, length, width)
    return (t_hit < dist - slack) & ~contained & (dist > 0.0)
