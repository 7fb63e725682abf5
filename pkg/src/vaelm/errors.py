"""Exception types shared across the package."""


class VaeError(Exception):
    """Base class for all package errors."""


class DimensionError(VaeError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(VaeError, FloatingPointError):
    """A NaN or infinity was produced or supplied."""


class ContractError(VaeError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(VaeError, ValueError):
    """Invalid configuration value."""


class FormatError(VaeError, ValueError):
    """A file could not be parsed."""


class CompatibilityError(VaeError, ValueError):
    """A file is well formed but does not match the model or vocabulary."""


class UndefinedCorrelationError(VaeError, ValueError):
    """Correlation requested for a constant series."""
