"""Closed-form mock prior built from linear pieces.

Every operation is a linear map, so the distillation gradient has an exact
hand-derivable form the tests can check against. It is also the default
guidance source for CPU-only training runs: with the default predictor
(noise estimate = embedded condition) the discrepancy between the render
branch and the low-resolution branch pulls the render toward the observed
content at the working resolution.

Structure:
  embed(I)           = bicubic resample of I to fixed working dims (or the
                       image itself when `working_hw` is None)
  encode(I, z, m)    = alpha(m) * embed(I) + sigma(m) * z
  predict(z, I, t)   = A @ z_flat + B @ embed(I)_flat   (A, B optional)
  denoise(x, t, t')  = x - (sigma(t) - sigma(t')) * predict(x, I, t)
  decode(x, hw, I)   = bicubic resample of the conditioning image to hw
  encode_vjp         = alpha(m) * embed-adjoint(grad)

Default schedule: alpha(t) = 1 - t / L, sigma(t) = t / L over L steps.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..losses import resample, resample_adjoint
from .provider import Latent, PriorProvider, validate_image


class LinearMockProvider(PriorProvider):
    def __init__(
        self,
        working_hw: tuple[int, int] | None = (16, 16),
        latent_matrix: np.ndarray | None = None,
        condition_matrix: np.ndarray | None = None,
        schedule_len: int = 1000,
        alpha: Callable[[int], float] | None = None,
        sigma: Callable[[int], float] | None = None,
    ):
        """`latent_matrix` (A) and `condition_matrix` (B) act on flattened
        latents; None means A = 0 and B = identity. `working_hw` = None makes
        the embedding the identity (latent dims track the image)."""
        self._working_hw = None if working_hw is None else (int(working_hw[0]), int(working_hw[1]))
        self._schedule_len = int(schedule_len)
        if self._schedule_len < 1:
            raise ValueError(f"schedule_len must be >= 1, got {schedule_len}")
        self._alpha = alpha if alpha is not None else (lambda t: 1.0 - t / self._schedule_len)
        self._sigma = sigma if sigma is not None else (lambda t: t / self._schedule_len)
        self._a = None if latent_matrix is None else np.asarray(latent_matrix, dtype=np.float64)
        self._b = None if condition_matrix is None else np.asarray(condition_matrix, dtype=np.float64)
        for name, mat in (("latent_matrix", self._a), ("condition_matrix", self._b)):
            if mat is not None and (mat.ndim != 2 or mat.shape[0] != mat.shape[1]):
                raise ValueError(f"{name} must be square, got shape {None if mat is None else mat.shape}")

    def latent_dims(self, image_hw: tuple[int, int]) -> tuple[int, int, int]:
        hw = self._working_hw if self._working_hw is not None else (int(image_hw[0]), int(image_hw[1]))
        return (3, hw[0], hw[1])

    def schedule_length(self) -> int:
        return self._schedule_len

    def _embed(self, image: np.ndarray) -> np.ndarray:
        image = validate_image(image, "condition image")
        if self._working_hw is not None and image.shape[:2] != self._working_hw:
            image = resample(image, self._working_hw, clip=False)
        return np.moveaxis(image, 2, 0)  # (3, h, w)

    def _embed_adjoint(self, grad: np.ndarray, image_hw: tuple[int, int]) -> np.ndarray:
        grad = np.moveaxis(grad, 0, 2)
        if self._working_hw is not None and tuple(image_hw) != self._working_hw:
            grad = resample_adjoint(grad, image_hw)
        return grad

    def encode(self, image: np.ndarray, noise: np.ndarray, timestep: int) -> Latent:
        emb = self._embed(image)
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != emb.shape:
            raise ValueError(f"noise shape {noise.shape} != latent dims {emb.shape}")
        return Latent(self._alpha(timestep) * emb + self._sigma(timestep) * noise, timestep)

    def predict_noise(self, latent: Latent, condition: np.ndarray, timestep: int) -> np.ndarray:
        flat = latent.data.reshape(-1)
        out = self._a @ flat if self._a is not None else np.zeros_like(flat)
        cond = self._embed(condition).reshape(-1)
        out = out + (self._b @ cond if self._b is not None else cond)
        return out.reshape(latent.data.shape)

    def denoise(self, latent: Latent, t_from: int, t_to: int, condition: np.ndarray) -> Latent:
        if latent.timestep != t_from:
            raise ValueError(f"latent is at timestep {latent.timestep}, asked to jump from {t_from}")
        step = self._sigma(t_from) - self._sigma(t_to)
        if step == 0.0:
            return Latent(latent.data, t_to)
        eps = self.predict_noise(latent, condition, t_from)
        return Latent(latent.data - step * eps, t_to)

    def decode(self, latent: Latent, out_hw: tuple[int, int], condition: np.ndarray) -> np.ndarray:
        condition = validate_image(condition, "condition image")
        return resample(condition, out_hw)

    def encode_vjp(self, image: np.ndarray, grad_latent: np.ndarray, timestep: int) -> np.ndarray:
        image = validate_image(image, "image")
        grad_latent = np.asarray(grad_latent, dtype=np.float64)
        return self._alpha(timestep) * self._embed_adjoint(grad_latent, image.shape[:2])
