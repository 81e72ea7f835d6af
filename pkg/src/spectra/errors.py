"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError and
FormatError -> 2, NumericError -> 3.
"""


class SpectraError(Exception):
    """Base class for all package errors."""


class ShapeError(SpectraError, ValueError):
    """Tensor dimensions do not line up."""


class ConfigError(SpectraError, ValueError):
    """Invalid hyperparameter or configuration value."""


class NumericError(SpectraError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class DataError(SpectraError, ValueError):
    """Malformed or insufficient input data."""


class LabelError(DataError):
    """Class label outside the valid range."""


class UsageError(SpectraError, RuntimeError):
    """API misuse, e.g. backward without a cached forward."""


class FormatError(SpectraError, ValueError):
    """Model-file format violation (base class)."""


class MagicError(FormatError):
    """Model file does not start with the expected magic bytes."""


class VersionError(FormatError):
    """Model file declares an unsupported format version."""


class ChecksumError(FormatError):
    """Stored CRC-32 does not match the file contents."""


class TruncationError(FormatError):
    """Model file ends before the declared payload does."""
