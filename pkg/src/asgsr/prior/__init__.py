"""Generative prior guidance: provider interface, distillation gradient,
high-resolution reference generation, and the external-process protocol."""

from .external import ExternalProvider
from .lds import lds_gradient, make_reference, reference_noise
from .mock import LinearMockProvider
from .protocol import Frame, Opcode, pack_frame, parse_frame, read_frame
from .provider import Latent, NullProvider, PriorConfig, PriorProvider

__all__ = [
    "ExternalProvider",
    "Frame",
    "Latent",
    "LinearMockProvider",
    "NullProvider",
    "Opcode",
    "PriorConfig",
    "PriorProvider",
    "lds_gradient",
    "make_reference",
    "pack_frame",
    "parse_frame",
    "read_frame",
    "reference_noise",
]
