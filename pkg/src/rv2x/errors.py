"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration value, file, or argument combination."""


class QuadratureError(RuntimeError):
    """A numerical integration failed to reach its tolerance.

    Carries a ``diagnostics`` dict (levels tried, last delta, parameters)
    so the caller can log what happened.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class InfeasibleMatching(RuntimeError):
    """No finite-weight perfect matching exists for the given weight matrix."""
