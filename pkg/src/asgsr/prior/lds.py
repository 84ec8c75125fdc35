"""Latent-discrepancy guidance gradient and the high-resolution reference.

One shared noise draw feeds two branches: the current render and the
low-resolution observation are both embedded and noised to the same start
timestep, then jumped down asynchronously (the render branch to a fresh early
timestep, the observation branch to its fixed one). The image-space gradient
is the weighted difference of the two noise predictions pulled back through
the encoder; the observation branch is a constant with respect to the scene.
"""

from __future__ import annotations

import numpy as np

from ..errors import ProviderError
from .provider import Latent, PriorConfig, PriorProvider, validate_image


def _check_branch_dims(provider: PriorProvider, image_sr: np.ndarray, image_lr: np.ndarray):
    dims_sr = tuple(provider.latent_dims(image_sr.shape[:2]))
    dims_lr = tuple(provider.latent_dims(image_lr.shape[:2]))
    if dims_sr != dims_lr:
        raise ProviderError(
            "latent dims differ between branches "
            f"({dims_sr} for the render vs {dims_lr} for the observation); "
            "the shared noise draw requires equal dims"
        )
    return dims_sr


def lds_gradient(
    provider: PriorProvider,
    image_sr: np.ndarray,
    image_lr: np.ndarray,
    config: PriorConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Gradient of the prior-guidance term with respect to the render.

    Returns an array shaped like `image_sr`. The caller owns the term weight
    in the total objective; the timestep weighting w(t) lives in `config`.
    """
    image_sr = validate_image(image_sr, "render")
    image_lr = validate_image(image_lr, "observation")
    m = config.start_timestep
    if m > provider.schedule_length():
        raise ProviderError(
            f"start timestep {m} exceeds provider schedule length {provider.schedule_length()}"
        )
    dims = _check_branch_dims(provider, image_sr, image_lr)

    t_render = config.sample_render_timestep(rng)
    noise = rng.standard_normal(dims)

    lat_sr = provider.denoise(provider.encode(image_sr, noise, m), m, t_render, image_sr)
    lat_lr = provider.denoise(provider.encode(image_lr, noise, m), m, config.lr_timestep, image_lr)
    eps_sr = provider.predict_noise(lat_sr, image_sr, t_render)
    eps_lr = provider.predict_noise(lat_lr, image_lr, config.lr_timestep)

    grad = provider.encode_vjp(image_sr, eps_sr - eps_lr, m)
    # weight applied last: scaling the schedule scales the result exactly
    return config.weight(t_render) * grad


def reference_noise(seed: int, stage_index: int, view_index: int, dims: tuple[int, int, int]) -> np.ndarray:
    """Deterministic per-(stage, view) noise so cached references are
    regenerable after a resume without serializing them."""
    mix = np.random.SeedSequence([int(seed), int(stage_index), int(view_index)])
    return np.random.default_rng(mix).standard_normal(dims)


def make_reference(
    provider: PriorProvider,
    image_lr: np.ndarray,
    config: PriorConfig,
    out_hw: tuple[int, int],
    noise: np.ndarray,
) -> np.ndarray:
    """High-resolution reference for an orthogonal view: run the observation
    branch to its timestep, denoise the rest of the way, decode at `out_hw`."""
    image_lr = validate_image(image_lr, "observation")
    m = config.start_timestep
    lat_n = provider.denoise(provider.encode(image_lr, noise, m), m, config.lr_timestep, image_lr)
    lat_0 = provider.denoise(lat_n, config.lr_timestep, 0, image_lr)
    return provider.decode(lat_0, out_hw, image_lr)
