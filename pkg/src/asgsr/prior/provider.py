"""Diffusion-prior provider interface.

The optimizer only ever talks to this surface: encode an image into a noised
latent, predict noise, jump between timesteps, decode, and pull a latent-space
gradient back to image space. Anything that can answer these six questions can
guide training; no network runtime lives in this package.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from ..errors import ProviderError

WEIGHTINGS = ("constant", "sigma_ratio")


@dataclass(frozen=True)
class Latent:
    """A (channels, h, w) latent tensor tagged with its noise timestep."""

    data: np.ndarray
    timestep: int

    def __post_init__(self):
        data = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if data.ndim != 3:
            raise ValueError(f"latent must be (channels, h, w), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("latent contains non-finite values")
        if not isinstance(self.timestep, (int, np.integer)) or self.timestep < 0:
            raise ValueError(f"latent timestep must be a non-negative integer, got {self.timestep}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "timestep", int(self.timestep))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)  # type: ignore[return-value]


@dataclass(frozen=True)
class PriorConfig:
    """Timestep plan for the distillation gradient.

    Both image branches are noised to `start_timestep`, then jumped down: the
    low-resolution branch to `lr_timestep`, the render branch to a fresh
    uniform draw from [0, lr_timestep) each call (or `fixed_render_timestep`
    when pinned for reproducibility; the pin may equal lr_timestep so the
    zero-discrepancy case is expressible).
    """

    start_timestep: int = 250
    lr_timestep: int = 200
    fixed_render_timestep: int | None = None
    weighting: str = "constant"
    weight_scale: float = 1.0

    def __post_init__(self):
        if not 0 < self.lr_timestep <= self.start_timestep:
            raise ValueError(
                f"need 0 < lr_timestep <= start_timestep, got {self.lr_timestep}, {self.start_timestep}"
            )
        if self.fixed_render_timestep is not None and not (
            0 <= self.fixed_render_timestep <= self.lr_timestep
        ):
            raise ValueError(
                f"fixed_render_timestep must lie in [0, {self.lr_timestep}], got {self.fixed_render_timestep}"
            )
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}, got {self.weighting!r}")
        if not (np.isfinite(self.weight_scale) and self.weight_scale >= 0.0):
            raise ValueError(f"weight_scale must be finite and >= 0, got {self.weight_scale}")

    def sample_render_timestep(self, rng: np.random.Generator) -> int:
        if self.fixed_render_timestep is not None:
            return self.fixed_render_timestep
        return int(rng.integers(0, self.lr_timestep))

    def weight(self, render_timestep: int) -> float:
        if self.weighting == "constant":
            return self.weight_scale
        # sigma_ratio assumes a schedule with sigma proportional to t
        return self.weight_scale * (render_timestep / self.lr_timestep)


class PriorProvider(ABC):
    """Abstract generative prior. Implementations must be deterministic:
    all randomness enters through the caller-supplied noise tensor."""

    @abstractmethod
    def latent_dims(self, image_hw: tuple[int, int]) -> tuple[int, int, int]:
        """Latent (channels, h, w) produced for an RGB image of (h, w)."""

    @abstractmethod
    def schedule_length(self) -> int:
        """Number of timesteps in the provider's noise schedule."""

    @abstractmethod
    def encode(self, image: np.ndarray, noise: np.ndarray, timestep: int) -> Latent:
        """Embed an (h, w, 3) image and mix in `noise` at `timestep`."""

    @abstractmethod
    def predict_noise(self, latent: Latent, condition: np.ndarray, timestep: int) -> np.ndarray:
        """Noise estimate for `latent` conditioned on an image; latent-shaped."""

    @abstractmethod
    def denoise(self, latent: Latent, t_from: int, t_to: int, condition: np.ndarray) -> Latent:
        """Jump a latent from `t_from` down to `t_to`. Must satisfy
        denoise(x, t, t) = x."""

    @abstractmethod
    def decode(self, latent: Latent, out_hw: tuple[int, int], condition: np.ndarray) -> np.ndarray:
        """Render a latent to an (h, w, 3) image at `out_hw`."""

    @abstractmethod
    def encode_vjp(self, image: np.ndarray, grad_latent: np.ndarray, timestep: int) -> np.ndarray:
        """Pull a latent-space gradient back through encode onto `image`."""

    def close(self) -> None:  # pragma: no cover - trivial default
        """Release any resources (child processes, sockets)."""

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


class NullProvider(PriorProvider):
    """Stands in when prior guidance is disabled; any use is a bug."""

    def _refuse(self):
        raise ProviderError("the null provider has no operations; prior guidance is disabled")

    def latent_dims(self, image_hw):
        self._refuse()

    def schedule_length(self):
        self._refuse()

    def encode(self, image, noise, timestep):
        self._refuse()

    def predict_noise(self, latent, condition, timestep):
        self._refuse()

    def denoise(self, latent, t_from, t_to, condition):
        self._refuse()

    def decode(self, latent, out_hw, condition):
        self._refuse()

    def encode_vjp(self, image, grad_latent, timestep):
        self._refuse()


def validate_image(image: np.ndarray, what: str) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"{what} must be (h, w, 3), got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValueError(f"{what} contains non-finite values")
    return image
