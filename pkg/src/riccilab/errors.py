"""Exception types shared across the package."""


class GridMismatchError(ValueError):
    """Two fields that must share a grid do not."""


class NotSPDError(ValueError):
    """A pointwise matrix that must be symmetric positive-definite is not."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class NumericalFailureError(RuntimeError):
    """A time integration produced NaN/Inf or lost positive-definiteness."""

    def __init__(self, message, time=None, step=None, diagnostics=None):
        super().__init__(message)
        self.time = time
        self.step = step
        self.diagnostics = diagnostics or {}


class ConfigError(ValueError):
    """A scenario configuration is malformed; carries the offending key."""

    def __init__(self, key, message):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


class DomainError(ValueError):
    """A closed-form solution was evaluated outside its interval of existence."""
