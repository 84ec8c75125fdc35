"""Optional density maintenance: clone, split, prune.

Standard splatting housekeeping, off by default (reproducible runs keep the
Gaussian count fixed). High-gradient Gaussians are cloned when small and
split in two when large (child scales divided by 1.6, child positions drawn
inside the parent); near-transparent ones are pruned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene.gaussians import Gaussians, concatenate
from ..scene.quaternions import rotation_matrices
from .adam import AdamState

SPLIT_SCALE_SHRINK = 1.6


@dataclass(frozen=True)
class DensifyConfig:
    interval: int = 100  # iterations between maintenance passes
    start_iteration: int = 500
    grad_threshold: float = 2e-4  # mean positional-gradient norm trigger
    size_threshold: float = 0.01  # world-space scale separating clone from split
    prune_opacity: float = 0.005

    def __post_init__(self):
        if self.interval < 1:
            raise ValueError(f"densify interval must be >= 1, got {self.interval}")
        if self.prune_opacity < 0:
            raise ValueError(f"prune_opacity must be >= 0, got {self.prune_opacity}")


def densify_prune(
    gaussians: Gaussians,
    adam: AdamState,
    mean_grad_norms: np.ndarray,
    config: DensifyConfig,
    rng: np.random.Generator,
) -> tuple[Gaussians, dict[str, int]]:
    """One maintenance pass. Returns the new set and a count report; `adam`
    moment buffers are remapped in place (zeros for new Gaussians)."""
    opacities = gaussians.opacities
    keep = opacities >= config.prune_opacity
    n_pruned = int(np.sum(~keep))

    max_scale = gaussians.scales.max(axis=1)
    hot = (mean_grad_norms > config.grad_threshold) & keep
    clone_mask = hot & (max_scale <= config.size_threshold)
    split_mask = hot & (max_scale > config.size_threshold)

    survivors_idx = np.flatnonzero(keep & ~split_mask)
    survivors = gaussians.select(survivors_idx)

    parts = [survivors]
    clones = gaussians.select(np.flatnonzero(clone_mask))
    if len(clones):
        parts.append(clones)

    split_idx = np.flatnonzero(split_mask)
    n_split = int(split_idx.size)
    if n_split:
        parent = gaussians.select(split_idx)
        rotm = rotation_matrices(parent.unit_rotations)
        children = []
        for _ in range(2):
            local = rng.standard_normal((n_split, 3)) * parent.scales
            child = parent.copy()
            child.positions += np.einsum("nij,nj->ni", rotm, local)
            child.log_scales -= np.log(SPLIT_SCALE_SHRINK)
            children.append(child)
        parts.extend(children)

    out = concatenate(parts) if len(parts) > 1 else survivors
    adam.select(survivors_idx)
    adam.extend(len(out) - survivors_idx.size)
    return out, {"pruned": n_pruned, "cloned": int(len(clones)), "split": n_split}
