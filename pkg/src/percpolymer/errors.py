"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is outside its allowed range."""


class GeometryError(ValueError):
    """A requested object does not fit in the lattice box."""


class ConditioningError(RuntimeError):
    """Rejection sampling ran out of attempts."""

    def __init__(self, attempts: int, message: str | None = None):
        self.attempts = attempts
        super().__init__(message or f"origin not in a crossing cluster after {attempts} attempts")


class GuardError(ValueError):
    """A brute-force routine was asked for a problem that is too large."""


class ConfigError(ValueError):
    """Malformed or out-of-range run configuration."""
