"""Exception hierarchy shared across the package.

CLI exit codes map onto these classes: ConfigError -> 2, DataError -> 3,
NumericError -> 4. Everything else is a plain bug and exits nonzero via
the normal traceback path.
"""


class SplatkitError(Exception):
    pass


class ShapeError(SplatkitError, ValueError):
    """Operand dimensions incompatible with the requested operation."""


class ContractError(SplatkitError, ValueError):
    """A documented precondition was violated by the caller."""


class NumericError(SplatkitError, ArithmeticError):
    """Non-finite values or a numeric abort during computation."""


class BehindCameraError(ContractError):
    """Point has camera-space z <= 0 and cannot be projected."""


class ConfigError(SplatkitError, ValueError):
    """Invalid or inconsistent run configuration."""


class DataError(SplatkitError, ValueError):
    """Missing or malformed on-disk data."""


class PlyParseError(DataError):
    """Malformed PLY input; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class UndefinedMetricError(ContractError):
    """Metric requested over an empty evaluation set."""
