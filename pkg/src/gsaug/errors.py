"""Exception hierarchy shared across the package."""


class GsaugError(Exception):
    """Base class for all errors raised by this package."""


class InvalidPrimitiveError(GsaugError):
    """A Gaussian primitive violates a field invariant (opacity range, quaternion norm, scale sign)."""


class InvalidRotationError(GsaugError):
    """A matrix is not a proper rotation (orthonormal, det +1) within tolerance."""


class FormatError(GsaugError):
    """Malformed file content or inconsistent field layout."""


class ConfigError(GsaugError):
    """Invalid configuration or schema violation."""


class NoPlacementPossibleError(GsaugError):
    """The drivable space is empty or no valid candidate placement could be produced."""


class AlignmentError(GsaugError):
    """Point-set alignment failed on degenerate input."""


class AnnotationError(GsaugError):
    """Annotation emission failed (e.g. duplicate instance ids)."""
