"""Exception types shared across the package."""


class IimtError(Exception):
    pass


class ShapeError(IimtError, ValueError):
    """Operand shapes are incompatible."""


class ValidationError(IimtError, ValueError):
    """An input violates an operation's precondition."""


class ConfigError(IimtError, ValueError):
    """A configuration or generator parameter is invalid."""


class NumericError(IimtError, ArithmeticError):
    """NaN, infinity, or divergence encountered."""


class ContractError(IimtError, RuntimeError):
    """An API was used outside its contract (e.g. backward on a non-scalar)."""


class OracleError(IimtError, RuntimeError):
    """A test oracle could not produce a trustworthy answer."""
