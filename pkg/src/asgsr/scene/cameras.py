"""Pinhole cameras and view selection.

A camera stores base-resolution intrinsics plus a per-view scale factor s.
Rendering at scale s multiplies the focal length and principal point by s and
targets round(base_resolution * s) pixels, so non-integer factors are fine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEPTH_EPS = 1e-6  # near-plane clamp for depths, world units


def _round_dim(value: float) -> int:
    return max(1, int(math.floor(value + 0.5)))


@dataclass
class Camera:
    """World-to-camera pinhole view.

    Attributes:
        focal: focal length in base-resolution pixels (square pixels, fx = fy).
        principal: (2,) principal point in base-resolution pixels.
        rotation: (3, 3) world-to-camera rotation.
        translation: (3,) world-to-camera translation; x_cam = R x + t.
        base_resolution: (width, height) at scale 1.
        scale_factor: this view's scale factor s >= 1.
        is_orthogonal: set by `select_orthogonal_views`; gates the texture loss.
    """

    focal: float
    principal: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    base_resolution: tuple[int, int]
    scale_factor: float = 1.0
    is_orthogonal: bool = False

    def __post_init__(self):
        self.principal = np.asarray(self.principal, dtype=np.float64).reshape(2)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.base_resolution = (int(self.base_resolution[0]), int(self.base_resolution[1]))
        if not self.focal > 0.0:
            raise ValueError(f"focal must be positive, got {self.focal}")
        if not self.scale_factor >= 1.0:
            raise ValueError(f"scale_factor must be >= 1, got {self.scale_factor}")
        if self.base_resolution[0] < 1 or self.base_resolution[1] < 1:
            raise ValueError(f"base_resolution must be >= 1x1, got {self.base_resolution}")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"rotation is not orthonormal (max |R R^T - I| = {err:.3e})")

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def depths(self, points: np.ndarray) -> np.ndarray:
        """Camera-space z, clamped from below at DEPTH_EPS."""
        z = self.world_to_camera(points)[..., 2]
        return np.maximum(z, DEPTH_EPS)

    def optical_axis(self) -> np.ndarray:
        """World-space viewing direction (camera-space +z)."""
        return self.rotation[2, :].copy()

    def output_resolution(self, scale_factor: float | None = None) -> tuple[int, int]:
        s = self.scale_factor if scale_factor is None else float(scale_factor)
        w, h = self.base_resolution
        return (_round_dim(w * s), _round_dim(h * s))


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """Build (rotation, translation) for a camera at `eye` looking at `target`.

    Camera convention: +z forward, +x right, +y down (image rows grow down).
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    forward = target - eye
    norm = np.linalg.norm(forward)
    if norm == 0.0:
        raise ValueError("eye and target coincide")
    forward = forward / norm
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-12:
        # forward parallel to up; pick an arbitrary orthogonal axis
        right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        if np.linalg.norm(right) < 1e-12:
            right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward], axis=0)
    translation = -rotation @ eye
    return rotation, translation


def axis_angle_deg(a: Camera, b: Camera) -> float:
    cosang = float(np.clip(np.dot(a.optical_axis(), b.optical_axis()), -1.0, 1.0))
    return math.degrees(math.acos(cosang))


def select_orthogonal_views(cameras: list[Camera], min_angle_deg: float = 60.0) -> list[int]:
    """Greedy orthogonal-view selection by optical-axis separation.

    Starts from camera 0 and adds a camera iff its axis is at least
    `min_angle_deg` away from every camera already selected. Sets
    `is_orthogonal` on all cameras (True for selected, False otherwise).
    Deterministic and idempotent: depends only on the axes.
    """
    if not cameras:
        return []
    selected: list[int] = [0]
    for i in range(1, len(cameras)):
        if all(axis_angle_deg(cameras[i], cameras[j]) >= min_angle_deg for j in selected):
            selected.append(i)
    chosen = set(selected)
    for i, cam in enumerate(cameras):
        cam.is_orthogonal = i in chosen
    return selected
