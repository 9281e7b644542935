"""Exception hierarchy shared by every dualgate module."""


class DualGateError(Exception):
    """Base class for all errors raised by dualgate."""


class ConfigurationError(DualGateError, ValueError):
    """Shapes, widths or config values that cannot work together."""


class ContractError(DualGateError, ValueError):
    """A precondition of an operation was violated by the caller."""


class NumericError(DualGateError, ArithmeticError):
    """A NaN or Inf appeared where finite values are required."""


class DegenerateBatchError(ContractError):
    """Batch statistics requested on a batch too small to have any."""
