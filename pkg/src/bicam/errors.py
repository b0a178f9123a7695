"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors exit 2 (argparse),
DataFormatError exits 3, NumericError exits 4.
"""


class BicamError(Exception):
    """Base class for package errors."""


class DimensionError(BicamError, ValueError):
    """Operand shapes are incompatible with the operation."""


class ParameterError(BicamError, ValueError):
    """A parameter is outside its valid range (e.g. temperature <= 0)."""


class StateError(BicamError, RuntimeError):
    """An operation was called before its prerequisite (e.g. gradient missing)."""


class ContractError(BicamError, ValueError):
    """Inputs violate an operation's contract (e.g. non-scalar backward root)."""


class DataFormatError(BicamError, ValueError):
    """A file or stream does not conform to its documented format."""


class NumericError(BicamError, ArithmeticError):
    """A computation produced NaN/Inf from finite inputs."""
