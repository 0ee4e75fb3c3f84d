"""Pinhole camera model, yaw-only poses and semantic point clouds.

Frames
------
World: right-handed, x east, y north, z up, meters. Heading 0 deg points
along +x and grows counter-clockwise.

Camera: u right, v down in the image; x right, y down, z forward in the
camera frame. ``CAMERA_TO_BODY`` maps camera z to the heading direction,
camera x to the right of the heading and camera y to world -z, so the
principal ray is horizontal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

PANORAMA_OFFSETS = (-90.0, -45.0, 0.0, 45.0, 90.0)

# columns are the body-frame images of camera x, y, z (heading 0)
CAMERA_TO_BODY = np.array(
    [
        [0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
    ]
)


def normalize_heading(deg):
    h = math.fmod(float(deg), 360.0)
    if h < 0:
        h += 360.0
    # fmod of e.g. -1e-15 lands on 360.0 after the shift
    return 0.0 if h >= 360.0 else h


def yaw_matrix(deg):
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgumentError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise InvalidArgumentError("principal point outside the image")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self):
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )


def intrinsics_from_fov(fov_degrees, width, height):
    """Square-pixel intrinsics for a horizontal field of view.

    >>> intrinsics_from_fov(90, 512, 512).fx
    256.0
    """
    if not (0 < fov_degrees < 180):
        raise InvalidArgumentError(f"fov must lie in (0, 180), got {fov_degrees}")
    if int(width) < 1 or int(height) < 1:
        raise InvalidArgumentError("image dimensions must be >= 1")
    f = (width / 2.0) / math.tan(math.radians(fov_degrees) / 2.0)
    # tan(45 deg) is 0.9999999999999999 in binary; snap the common case
    if fov_degrees == 90:
        f = width / 2.0
    return CameraIntrinsics(f, f, width / 2.0, height / 2.0, int(width), int(height))


@dataclass(frozen=True)
class Pose:
    position: tuple
    heading: float = 0.0

    def __post_init__(self):
        p = tuple(float(c) for c in self.position)
        if len(p) != 3 or not all(math.isfinite(c) for c in p):
            raise InvalidArgumentError(f"position must be a finite 3-vector, got {self.position}")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "heading", normalize_heading(self.heading))

    @property
    def xyz(self):
        return np.asarray(self.position)


@dataclass
class DepthView:
    depth: np.ndarray
    semantic: np.ndarray
    view_offset: float = 0.0

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=float)
        self.semantic = np.asarray(self.semantic, dtype=np.int64)
        if self.depth.shape != self.semantic.shape or self.depth.ndim != 2:
            raise InvalidArgumentError("depth and semantic grids must be 2-D and share a shape")
        if np.any(self.depth < 0):
            raise InvalidArgumentError("depth must be non-negative")


@dataclass
class SemanticPointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    label_table: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.points) != len(self.labels):
            raise InvalidArgumentError("points and labels differ in length")
        missing = set(np.unique(self.labels).tolist()) - set(self.label_table)
        if missing:
            raise InvalidArgumentError(f"labels {sorted(missing)} missing from label_table")

    def __len__(self):
        return len(self.points)

    def label_of(self, caption):
        for k, v in self.label_table.items():
            if v == caption:
                return k
        return None

    def select(self, caption):
        """Points carrying ``caption``; empty (0, 3) array when absent."""
        lab = self.label_of(caption)
        if lab is None:
            return np.zeros((0, 3))
        return self.points[self.labels == lab]


def view_rotation(heading, view_offset):
    """Camera-to-world rotation for a view at ``heading + view_offset``."""
    return yaw_matrix(heading + view_offset) @ CAMERA_TO_BODY


def pixel_rays(intrinsics, view_offset, heading):
    """World-frame ray per pixel, scaled so the camera-z component is 1.

    Returns an (H, W, 3) array; a point at planar depth Z along pixel
    (u, v) sits at ``position + Z * rays[v, u]``.
    """
    v, u = np.mgrid[0 : intrinsics.height, 0 : intrinsics.width].astype(float)
    cam = np.stack(
        [(u - intrinsics.cx) / intrinsics.fx, (v - intrinsics.cy) / intrinsics.fy, np.ones_like(u)],
        axis=-1,
    )
    return cam @ view_rotation(heading, view_offset).T


def project_view(view, intrinsics, agent_pose, label_table=None):
    """Lift every labeled, valid-depth pixel of ``view`` into world space."""
    if view.depth.shape != (intrinsics.height, intrinsics.width):
        raise InvalidArgumentError(
            f"view is {view.depth.shape}, intrinsics expect {(intrinsics.height, intrinsics.width)}"
        )
    mask = (view.depth > 0) & (view.semantic != 0)
    vs, us = np.nonzero(mask)
    Z = view.depth[vs, us]
    pix = np.stack([us.astype(float), vs.astype(float), np.ones(len(us))])
    cam = (intrinsics.K_inv @ pix) * Z
    R = view_rotation(agent_pose.heading, view.view_offset)
    world = (R @ cam).T + agent_pose.xyz
    labels = view.semantic[vs, us]
    if label_table is None:
        label_table = {int(k): str(k) for k in np.unique(labels)}
    return SemanticPointCloud(world, labels, dict(label_table))


def unproject_point(point, intrinsics, agent_pose, view_offset):
    """Inverse of :func:`project_view` for one world point -> (u, v, Z)."""
    R = view_rotation(agent_pose.heading, view_offset)
    cam = R.T @ (np.asarray(point, dtype=float) - agent_pose.xyz)
    Z = cam[2]
    u, v, _ = intrinsics.K @ (cam / Z)
    return u, v, Z


def fuse_panorama(views):
    """Concatenate per-view clouds; label tables must agree on shared ids."""
    table = {}
    for cloud in views:
        for k, v in cloud.label_table.items():
            if table.setdefault(k, v) != v:
                raise InvalidArgumentError(f"label {k} maps to both {table[k]!r} and {v!r}")
    if not views:
        return SemanticPointCloud()
    points = np.concatenate([c.points for c in views]) if views else np.zeros((0, 3))
    labels = np.concatenate([c.labels for c in views])
    return SemanticPointCloud(points, labels, table)
