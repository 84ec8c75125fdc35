"""Quaternion helpers for splat orientations.

Quaternions are scalar-first (w, x, y, z), matching the community PLY layout
(rot_0..rot_3). Rotation construction assumes unit quaternions; callers that
hold raw parameters normalize first and chain gradients through
`normalize_jacobian`.
"""

from __future__ import annotations

import numpy as np


def normalize(quats: np.ndarray) -> np.ndarray:
    """Return unit quaternions, batched (..., 4)."""
    norms = np.linalg.norm(quats, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("zero-norm quaternion cannot be normalized")
    return quats / norms


def rotation_matrices(unit_quats: np.ndarray) -> np.ndarray:
    """Rotation matrices (..., 3, 3) from unit quaternions (..., 4)."""
    w, x, y, z = (unit_quats[..., i] for i in range(4))
    out = np.empty(unit_quats.shape[:-1] + (3, 3), dtype=unit_quats.dtype)
    out[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    out[..., 0, 1] = 2.0 * (x * y - w * z)
    out[..., 0, 2] = 2.0 * (x * z + w * y)
    out[..., 1, 0] = 2.0 * (x * y + w * z)
    out[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    out[..., 1, 2] = 2.0 * (y * z - w * x)
    out[..., 2, 0] = 2.0 * (x * z - w * y)
    out[..., 2, 1] = 2.0 * (y * z + w * x)
    out[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return out


def rotation_jacobian(unit_quats: np.ndarray) -> np.ndarray:
    """d(rotation matrix) / d(unit quaternion), shape (..., 3, 3, 4).

    Derivatives of the matrix entries with respect to the unit quaternion
    components; the projection onto the unit sphere is a separate factor,
    see `normalize_jacobian`.
    """
    w, x, y, z = (unit_quats[..., i] for i in range(4))
    zero = np.zeros_like(w)
    jac = np.empty(unit_quats.shape[:-1] + (3, 3, 4), dtype=unit_quats.dtype)
    # rows of R, each entry differentiated by (w, x, y, z)
    jac[..., 0, 0, :] = np.stack([zero, zero, -4.0 * y, -4.0 * z], axis=-1)
    jac[..., 0, 1, :] = np.stack([-2.0 * z, 2.0 * y, 2.0 * x, -2.0 * w], axis=-1)
    jac[..., 0, 2, :] = np.stack([2.0 * y, 2.0 * z, 2.0 * w, 2.0 * x], axis=-1)
    jac[..., 1, 0, :] = np.stack([2.0 * z, 2.0 * y, 2.0 * x, 2.0 * w], axis=-1)
    jac[..., 1, 1, :] = np.stack([zero, -4.0 * x, zero, -4.0 * z], axis=-1)
    jac[..., 1, 2, :] = np.stack([-2.0 * x, -2.0 * w, 2.0 * z, 2.0 * y], axis=-1)
    jac[..., 2, 0, :] = np.stack([-2.0 * y, 2.0 * z, -2.0 * w, 2.0 * x], axis=-1)
    jac[..., 2, 1, :] = np.stack([2.0 * x, 2.0 * w, 2.0 * z, 2.0 * y], axis=-1)
    jac[..., 2, 2, :] = np.stack([zero, -4.0 * x, -4.0 * y, zero], axis=-1)
    return jac


def normalize_jacobian(quats: np.ndarray) -> np.ndarray:
    """d(q / |q|) / dq, shape (..., 4, 4): (I - u u^T) / |q| with u = q/|q|."""
    norms = np.linalg.norm(quats, axis=-1, keepdims=True)
    unit = quats / norms
    eye = np.eye(4, dtype=quats.dtype)
    outer = unit[..., :, None] * unit[..., None, :]
    return (eye - outer) / norms[..., None]
