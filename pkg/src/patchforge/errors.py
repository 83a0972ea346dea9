"""Exception types shared across the package."""


class PatchforgeError(Exception):
    """Base class for all patchforge errors."""


class DegenerateTransform(PatchforgeError):
    """Raised when a projective transform is singular or near-singular."""


class ShapeError(PatchforgeError):
    """Raised when a tensor does not satisfy a shape precondition."""


class NonFiniteLoss(PatchforgeError):
    """Raised when a training loss turns NaN/Inf; carries a diagnostic dump."""


class ChecksumError(PatchforgeError):
    """Raised when a checkpoint fails content-checksum validation."""


class ConfigError(PatchforgeError):
    """Raised on malformed configuration files or invalid field values."""
