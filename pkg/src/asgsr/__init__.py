"""Arbitrary-scale Gaussian splatting super-resolution.

Reconstructs a splat scene from low-resolution views and renders anti-aliased
novel views at arbitrary scale factors, optionally steered by a generative
prior through latent distillation.
"""

__version__ = "0.1.0"
