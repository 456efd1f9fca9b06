"""Exception hierarchy shared by the library and the CLI.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class LedaError(Exception):
    """Base class for all library errors."""


class ConfigError(LedaError):
    """Invalid configuration: unknown keys, bad values, incompatible dims."""


class DataError(LedaError):
    """Invalid dataset or file: missing paths, malformed rows, bad indices."""


class CheckpointFormatError(DataError):
    """Checkpoint file violates the binary format contract."""


class NumericError(LedaError):
    """Non-finite values or numerically impossible requests."""


class ShapeError(LedaError):
    """Operands with incompatible shapes in a computation graph."""
