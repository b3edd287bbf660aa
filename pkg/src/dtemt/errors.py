"""Exception types shared across the package."""


class DtemtError(Exception):
    """Base class for all package errors."""


class SeriesMismatchError(DtemtError):
    """Coefficient series with incompatible length or expansion time."""


class SingularMagnitudeError(DtemtError):
    """Magnitude series with a (near-)zero leading coefficient.

    Raised by the sqrt-of-sum-of-squares recursion when the order-0
    magnitude falls below the configured guard, which in a simulation
    means the measured voltage magnitude has collapsed.
    """


class ConfigError(DtemtError):
    """Malformed or semantically inconsistent scenario configuration."""


class InitializationError(DtemtError):
    """Synthesized initial state is not an equilibrium of the model."""


class SimulationError(DtemtError):
    """A simulation step failed.

    Carries the simulation time, the offending variable (when known) and
    a human-readable reason.
    """

    def __init__(self, time, variable, reason):
        self.time = time
        self.variable = variable
        self.reason = reason
        super().__init__(f"t={time:.9g}s, variable={variable}: {reason}")


class NoAdmissibleStepError(DtemtError):
    """No step size in the search range meets the error tolerance."""
