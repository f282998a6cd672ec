"""Exception hierarchy shared across the package.

The CLI maps these to exit codes: ``DataError`` -> 1, ``ConfigError`` -> 2,
``NumericalFailure`` -> 3.
"""


class SaeSsdError(Exception):
    """Base class for all package errors."""


class DataError(SaeSsdError, ValueError):
    """Input data is malformed or violates a domain invariant."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])


class ConfigError(SaeSsdError, ValueError):
    """Invalid settings or usage."""


class NumericalFailure(SaeSsdError, RuntimeError):
    """A numerical routine failed to converge or produced unusable output."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InfeasibleIntervalError(ConfigError):
    """The upper end of the search interval does not meet the risk target."""
