"""
Exception hierarchy for the jump test.

Every public operation raises one of these instead of returning NaN or inf,
so callers can tell bad parameters from degenerate data from bad files.
"""


class JumpTestError(ValueError):
    """Root of all errors raised by this package."""


class DomainError(JumpTestError):
    """A parameter lies outside its mathematical domain (e.g. p <= 0, k < 2)."""


class DegeneratePathError(JumpTestError):
    """A denominator is zero: the observed path carries no information for the test."""


class InsufficientDataError(JumpTestError):
    """The series is shorter than the estimator needs."""


class ConfigError(JumpTestError):
    """Invalid test, simulation or experiment configuration."""


class IngestError(JumpTestError):
    """A tick file could not be read or has too many malformed rows."""


class EmptySessionError(IngestError):
    """No usable tick falls inside the trading session."""
