"""Exception hierarchy shared by all srilab modules."""


class SrilabError(Exception):
    """Base class for every error raised by srilab."""


class UsageError(SrilabError, ValueError):
    """A caller passed arguments that violate an operation's preconditions."""


class ValidationError(UsageError):
    """A configuration or spec object failed validation.

    ``field`` names the offending key (dotted path) when known.
    """

    def __init__(self, message, field=None):
        self.field = field
        self.reason = message
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class NumericalError(SrilabError, ArithmeticError):
    """An iterative numerical routine failed to reach its tolerance."""

    def __init__(self, message, residual=None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (residual {residual:.3e})"
        super().__init__(message)
