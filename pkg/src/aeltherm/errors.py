"""Exception types raised across the package."""


class AelthermError(Exception):
    """Base class."""


class ParameterError(AelthermError, ValueError):
    """Invalid physical or controller parameter."""


class InputError(AelthermError, ValueError):
    """Input signal outside its admissible range."""


class DomainError(AelthermError, ValueError):
    """A constitutive relation was evaluated outside its domain."""


class HeatExchangeDomainError(DomainError):
    """Cooling water is not colder than the lye at one end of the coil."""


class InitializationError(AelthermError, RuntimeError):
    """Delay history does not cover the requested lag."""


class ConvergenceError(AelthermError, RuntimeError):
    """Iterative solver failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InfeasibleCoolingError(AelthermError, RuntimeError):
    """Set point cannot be held even with the cooling valve fully open."""


class ConfigError(AelthermError, ValueError):
    """Scenario configuration is malformed or violates an invariant."""


class NumericalError(AelthermError, RuntimeError):
    """Simulation produced a non-finite or out-of-band state."""
