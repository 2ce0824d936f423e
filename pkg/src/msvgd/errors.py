"""Shared exception types."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class ConfigError(ValueError):
    """A run configuration is invalid or internally inconsistent."""


class NumericalAbort(RuntimeError):
    """A run produced non-finite values and cannot continue."""

    def __init__(self, message: str, iteration: int | None = None):
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)
        self.iteration = iteration
