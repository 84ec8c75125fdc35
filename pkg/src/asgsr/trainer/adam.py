"""Adam with one learning rate per parameter group.

Positions get an exponentially decaying rate (3DGS convention); everything
else is constant. Buffers live in a plain dict keyed by the Gaussian field
names so checkpoints can serialize them directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene.gaussians import PARAM_FIELDS, Gaussians

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15


@dataclass(frozen=True)
class LearningRates:
    position: float = 1.6e-4
    position_final_factor: float = 0.01  # position rate decays to this fraction
    rotation: float = 1e-3
    log_scale: float = 5e-3
    opacity: float = 5e-2
    color: float = 2.5e-3

    def position_at(self, step: int, total_steps: int) -> float:
        if total_steps <= 0:
            return self.position
        frac = min(max(step / total_steps, 0.0), 1.0)
        return self.position * self.position_final_factor**frac

    def for_step(self, step: int, total_steps: int) -> dict[str, float]:
        return {
            "positions": self.position_at(step, total_steps),
            "rotations": self.rotation,
            "log_scales": self.log_scale,
            "opacity_logits": self.opacity,
            "colors": self.color,
        }


class AdamState:
    def __init__(self, gaussians: Gaussians):
        self.step = 0
        self.m = {f: np.zeros_like(getattr(gaussians, f)) for f in PARAM_FIELDS}
        self.v = {f: np.zeros_like(getattr(gaussians, f)) for f in PARAM_FIELDS}

    def apply(self, gaussians: Gaussians, grads, rates: dict[str, float]) -> None:
        """One Adam step, updating `gaussians` arrays in place."""
        self.step += 1
        c1 = 1.0 - ADAM_BETA1**self.step
        c2 = 1.0 - ADAM_BETA2**self.step
        for fieldname in PARAM_FIELDS:
            g = getattr(grads, fieldname)
            m = self.m[fieldname]
            v = self.v[fieldname]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            param = getattr(gaussians, fieldname)
            param -= rates[fieldname] * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)

    def select(self, indices: np.ndarray) -> None:
        """Keep moment rows for the given Gaussian indices (after pruning)."""
        for fieldname in PARAM_FIELDS:
            self.m[fieldname] = self.m[fieldname][indices].copy()
            self.v[fieldname] = self.v[fieldname][indices].copy()

    def extend(self, n_new: int) -> None:
        """Fresh zero moments for newly added Gaussians."""
        if n_new <= 0:
            return
        for fieldname in PARAM_FIELDS:
            pad_shape = (n_new,) + self.m[fieldname].shape[1:]
            self.m[fieldname] = np.concatenate([self.m[fieldname], np.zeros(pad_shape)])
            self.v[fieldname] = np.concatenate([self.v[fieldname], np.zeros(pad_shape)])
