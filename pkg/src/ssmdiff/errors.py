"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are inconsistent with the operation's contract."""


class LengthError(ValueError):
    """Sequence length violates a transform precondition (e.g. not a power of two)."""


class DomainError(ValueError):
    """A parameter lies outside its valid range."""


class ContractError(ValueError):
    """An API was called in a way its contract forbids (e.g. backward on a non-scalar)."""


class NumericError(ArithmeticError):
    """A numeric failure: non-finite values, singular systems, diverging loss."""


class MetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. empty evaluation mask)."""


class ConfigError(ValueError):
    """A run configuration is invalid or incompatible with the data."""
