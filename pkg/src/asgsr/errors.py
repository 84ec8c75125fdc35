"""Exception types shared across the package.

Keeping these in one place lets the CLI map error classes onto exit codes
(config problems -> 2, everything else raised by us -> 3) without importing
half the package.
"""


class AsgsrError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AsgsrError):
    """Bad run configuration: unknown keys, out-of-range values, unreadable files."""


class PlyFormatError(AsgsrError):
    """Structurally invalid PLY: bad header, missing required property, wrong format."""


class PlyDataError(AsgsrError):
    """PLY parsed fine but carries unusable values (non-finite entries etc.)."""


class SceneFormatError(AsgsrError):
    """Scene JSON is malformed or references inconsistent resources."""


class ProtocolError(AsgsrError):
    """Malformed frame on the external-provider wire protocol."""


class ProviderError(AsgsrError):
    """The prior provider misbehaved: died, timed out, or returned inconsistent dims."""


class CheckpointError(AsgsrError):
    """Checkpoint file is not ours, truncated, or from an incompatible version."""


class TrainingError(AsgsrError):
    """Optimization went bad (non-finite loss or gradients); message carries
    the stage/iteration diagnostics."""
