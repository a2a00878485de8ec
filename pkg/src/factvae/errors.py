"""Exception types shared across the package."""


class FactVaeError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(FactVaeError, ValueError):
    """An argument violates an operation's precondition."""


class NumericalError(FactVaeError, ArithmeticError):
    """A computation produced a non-finite value."""


class ParseError(FactVaeError, ValueError):
    """A dataset or model file could not be parsed.

    ``line`` is the 1-based line number of the offending record, when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
