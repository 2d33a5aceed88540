"""
Exception hierarchy for the differential TD laboratory.

Every error also derives from the closest builtin so callers that only know
about ValueError keep working.
"""


class LabError(Exception):
    """Base class for all laboratory errors."""


class ShapeError(LabError, ValueError):
    """Array dimensions do not line up."""


class DomainError(LabError, ValueError):
    """An argument lies outside its mathematical domain."""


class InputError(LabError, ValueError):
    """Malformed data: non-stochastic rows, non-finite values, ragged CSVs."""


class ConfigError(LabError, ValueError):
    """Invalid schedule, experiment configuration or policy coverage."""


class NonErgodicError(LabError):
    """The chain is reducible or periodic."""


class SingularSystemError(LabError):
    """A linear system that must be solved is singular."""

    def __init__(self, message, eta=None):
        super().__init__(message)
        self.eta = eta
