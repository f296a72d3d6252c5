"""Exception types shared across the package.

Every error raised by library code derives from SpdHashError so callers
(including the CLI) can catch one base class and still tell failure modes
apart by subclass.
"""


class SpdHashError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SpdHashError):
    """Operands have incompatible or unsupported dimensions."""


class DomainError(SpdHashError):
    """A scalar argument is outside its valid range."""


class NotSpdError(SpdHashError):
    """A matrix expected to be symmetric positive definite is not."""


class ConvergenceError(SpdHashError):
    """An iterative decomposition failed to converge."""


class DegenerateSpectrumError(SpdHashError):
    """Singular values too close or too small for a stable gradient."""


class NumericalError(SpdHashError):
    """A non-finite value appeared where finite numbers are required."""


class EmptyVideoError(SpdHashError):
    """A video with zero frames was passed to the video branch."""


class DatasetError(SpdHashError):
    """A dataset cannot satisfy a sampling request."""


class FileFormatError(SpdHashError):
    """Base class for binary file format violations."""


class CorruptHeaderError(FileFormatError):
    """Magic bytes or declared sizes are inconsistent with the file."""


class TruncatedFileError(FileFormatError):
    """The file ends before the data its header declares."""


class VersionMismatchError(FileFormatError):
    """The file's format version is not supported by this reader."""
