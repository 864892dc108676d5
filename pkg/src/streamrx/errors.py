"""Exception types shared across the package."""


class StreamrxError(Exception):
    """Base class for all package errors."""


class ConfigurationError(StreamrxError, ValueError):
    """Inconsistent dimensions or invalid settings.

    ``errors`` lists every individual problem when several were found at once.
    """

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = list(errors) if errors else [message]


class NumericalError(StreamrxError, ArithmeticError):
    """A linear-algebra step failed (singular matrix, non-finite loss...)."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics

    def __str__(self):
        base = super().__str__()
        if not self.diagnostics:
            return base
        extra = ", ".join(f"{k}={v!r}" for k, v in self.diagnostics.items())
        return f"{base} ({extra})"


class CapabilityError(StreamrxError):
    """Requested update rule is refused for this model size."""


class ContractViolation(StreamrxError):
    """Caller broke an API precondition (e.g. pilot without label)."""
