"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes (config 2, data 3, anything
else 4), so raising the right class matters more than the message text.
"""


class PVFaultError(Exception):
    """Base class for every error this package raises on purpose."""


class ShapeError(PVFaultError, ValueError):
    """Tensor extents do not satisfy an operation's contract."""


class ConfigError(PVFaultError, ValueError):
    """A run was requested with invalid or inconsistent configuration."""


class DataError(PVFaultError, ValueError):
    """Dataset content violates the manifest/image/taxonomy contract."""


class NumericError(PVFaultError, ArithmeticError):
    """A computation produced non-finite values."""


class CheckpointError(PVFaultError):
    """Base class for checkpoint read/write failures."""


class CheckpointFormatError(CheckpointError):
    """File is not a recognizable checkpoint or is structurally invalid."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported by this code."""


class CheckpointTruncatedError(CheckpointError):
    """File is shorter than its header says it should be."""


class CheckpointChecksumError(CheckpointError):
    """Stored CRC-32 does not match the file contents."""


class ArchMismatchError(CheckpointError):
    """Checkpoint holds a different architecture than the caller expected."""
