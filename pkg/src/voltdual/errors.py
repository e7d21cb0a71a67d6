"""Exception hierarchy shared across the package."""


class VoltDualError(Exception):
    """Base class for all package errors."""


class TopologyError(VoltDualError):
    """Feeder graph is not a tree rooted at the substation."""


class ParameterError(VoltDualError, ValueError):
    """A numeric parameter is outside its admissible range."""


class ShapeError(VoltDualError, ValueError):
    """Vector or matrix dimensions do not agree."""


class DivergenceError(VoltDualError):
    """An iterative solver failed to converge within its iteration cap."""


class InfeasibleError(VoltDualError):
    """A device or problem has an empty feasible set."""


class RangeError(VoltDualError, ValueError):
    """A relaxed setpoint lies outside the span of its rate grid."""


class ClockError(VoltDualError):
    """Simulation clock state is invalid for the requested operation."""


class ConfigError(VoltDualError):
    """Scenario configuration failed to parse or validate."""


class IngestionError(VoltDualError):
    """A profile file is malformed."""


class AbortedRunError(VoltDualError):
    """The closed loop tripped the dual divergence sentinel.

    The partial trace collected up to the abort is kept on ``trace``.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
