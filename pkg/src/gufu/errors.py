"""Exception hierarchy shared by all gufu modules."""


class GufuError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(GufuError):
    """Operand shapes are incompatible for the requested operation."""


class ValidationError(GufuError):
    """Input data violates a documented range or format constraint."""


class ParseError(ValidationError):
    """A serialized record could not be decoded."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TrainingError(GufuError):
    """Training produced a non-finite loss or diverged."""


class ContractError(GufuError):
    """An operation was invoked outside its documented preconditions."""
