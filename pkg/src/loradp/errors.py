"""Exception types shared across the package."""


class LoraDpError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(LoraDpError, ValueError):
    pass


class ShapeError(LoraDpError, ValueError):
    pass


class DivergenceError(LoraDpError, ArithmeticError):
    """Raised when a trajectory produces non-finite weights or losses."""


class ConfigError(LoraDpError, ValueError):
    """Invalid experiment configuration.

    ``field`` holds the dotted path of the offending key when one is known.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field
