"""Splat parameter container.

Struct-of-arrays rather than one object per splat: every consumer (projection,
rasterization, optimizer) wants contiguous arrays. All parameter arrays are
float64; PLY interop narrows to float32 at the file boundary only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import quaternions

_FIELD_SHAPES = {
    "positions": (3,),
    "rotations": (4,),
    "log_scales": (3,),
    "opacity_logits": (),
    "colors": (3,),
}

PARAM_FIELDS = tuple(_FIELD_SHAPES)


@dataclass
class Gaussians:
    """A batch of anisotropic 3D Gaussians.

    Attributes:
        positions: (N, 3) world-space centers.
        rotations: (N, 4) scalar-first quaternions; stored unnormalized,
            renormalized on every read through `unit_rotations`.
        log_scales: (N, 3) log of per-axis standard deviations.
        opacity_logits: (N,) pre-sigmoid opacities.
        colors: (N, 3) RGB, nominally in [0, 1].
        max_rates: (N,) cached maximum sampling rates, or None when the cache
            has never been computed (a trainer or renderer fills it in).
    """

    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    max_rates: np.ndarray | None = field(default=None)

    def __post_init__(self):
        for name, tail in _FIELD_SHAPES.items():
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float64))
            if arr.shape != (arr.shape[0],) + tail:
                raise ValueError(f"{name} must have shape (N, {tail}), got {arr.shape}")
            setattr(self, name, arr)
        n = len(self.positions)
        for name in _FIELD_SHAPES:
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length {len(getattr(self, name))} != {n}")
        if self.max_rates is not None:
            self.max_rates = np.ascontiguousarray(np.asarray(self.max_rates, dtype=np.float64))
            if self.max_rates.shape != (n,):
                raise ValueError(f"max_rates must have shape ({n},), got {self.max_rates.shape}")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def unit_rotations(self) -> np.ndarray:
        return quaternions.normalize(self.rotations)

    @property
    def scales(self) -> np.ndarray:
        """Per-axis standard deviations exp(log_scales), (N, 3)."""
        return np.exp(self.log_scales)

    @property
    def opacities(self) -> np.ndarray:
        """sigmoid(opacity_logits), (N,)."""
        return expit(self.opacity_logits)

    def covariances(self) -> np.ndarray:
        """World-space covariances R S S^T R^T, (N, 3, 3)."""
        rot = quaternions.rotation_matrices(self.unit_rotations)
        rs = rot * self.scales[:, None, :]
        return rs @ np.swapaxes(rs, 1, 2)

    def copy(self) -> "Gaussians":
        return Gaussians(
            positions=self.positions.copy(),
            rotations=self.rotations.copy(),
            log_scales=self.log_scales.copy(),
            opacity_logits=self.opacity_logits.copy(),
            colors=self.colors.copy(),
            max_rates=None if self.max_rates is None else self.max_rates.copy(),
        )

    def select(self, mask_or_indices) -> "Gaussians":
        return Gaussians(
            positions=self.positions[mask_or_indices],
            rotations=self.rotations[mask_or_indices],
            log_scales=self.log_scales[mask_or_indices],
            opacity_logits=self.opacity_logits[mask_or_indices],
            colors=self.colors[mask_or_indices],
            max_rates=None if self.max_rates is None else self.max_rates[mask_or_indices],
        )

    def validate_finite(self):
        for name in _FIELD_SHAPES:
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                bad = int(np.argwhere(~np.isfinite(arr))[0][0])
                raise ValueError(f"non-finite value in {name} at element {bad}")


def concatenate(parts: list[Gaussians]) -> Gaussians:
    if not parts:
        raise ValueError("cannot concatenate zero Gaussian batches")
    kwargs = {name: np.concatenate([getattr(p, name) for p in parts]) for name in _FIELD_SHAPES}
    return Gaussians(**kwargs)
