"""Exception hierarchy shared by every evalign module."""


class EvalignError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(EvalignError, ValueError):
    """Input rejected before any computation (CLI exit code 2)."""


class EmptyStream(ValidationError):
    pass


class OutOfBounds(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class InvalidSpec(ValidationError):
    pass


class NonPositiveDelta(ValidationError):
    pass


class ParseError(EvalignError, ValueError):
    """Malformed file content. Carries the 1-based line or the byte offset."""

    def __init__(self, message, *, line=None, offset=None):
        where = ""
        if line is not None:
            where = f" (line {line})"
        elif offset is not None:
            where = f" (byte offset {offset})"
        super().__init__(message + where)
        self.line = line
        self.offset = offset


class NonFiniteLoss(EvalignError, ArithmeticError):
    """The objective became NaN/Inf during optimization (CLI exit code 3)."""
