"""Exception types shared across the stack."""


class ForestNavError(Exception):
    """Base class for all stack errors."""


class DomainError(ForestNavError):
    """An argument is outside the domain an operation is defined on."""


class ConfigError(ForestNavError):
    """A configuration value or combination of values is invalid."""


class InfeasibleSampleError(ForestNavError):
    """A trajectory sample left the region the cost map is defined on."""

    def __init__(self, message, t=None, point=None):
        super().__init__(message)
        self.t = t
        self.point = point


class PlannerError(ForestNavError):
    """No feasible trajectory could be produced for an observation."""
