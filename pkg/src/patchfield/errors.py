"""Exception types shared across the package."""


class PatchfieldError(Exception):
    """Base class for every error this package raises deliberately."""


class ShapeError(PatchfieldError, ValueError):
    """Operands disagree in extent, depth, or declared dimensions."""


class BoundsError(PatchfieldError, IndexError):
    """A position falls outside the valid grid of a tensor."""


class ConfigError(PatchfieldError, ValueError):
    """Inconsistent configuration or mismatched artifacts."""


class EmptySetError(PatchfieldError, ValueError):
    """An operation that needs a non-empty collection received none."""


class UndefinedMetricError(PatchfieldError, ValueError):
    """The requested metric has no defined value for these counts."""


class FormatError(PatchfieldError, ValueError):
    """A file does not conform to its documented layout."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class BadVersionError(FormatError):
    """File carries an unsupported format version."""


class TruncatedFileError(FormatError):
    """File size disagrees with what its header promises."""


class NonFiniteValueError(FormatError):
    """Payload contains NaN or infinite values."""


class ManifestError(PatchfieldError, ValueError):
    """Dataset manifest fails validation."""


class MissingFileError(ManifestError):
    """Manifest references a file that does not exist."""


class DuplicateIdError(ManifestError):
    """Manifest declares the same pair id twice."""


class ShapeMismatchError(ManifestError):
    """A pair's tensor or image disagrees with its declared layer spec."""
