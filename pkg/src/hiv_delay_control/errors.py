"""Exception hierarchy shared by every module of the package."""


class HivDelayError(Exception):
    """Base class for all errors raised by hiv_delay_control"""


class ConfigError(HivDelayError, ValueError):
    """Invalid parameters, initial data or run configuration"""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class StepIncompatible(HivDelayError, ValueError):
    """The step size does not divide a delay or the horizon"""


class NonFiniteState(HivDelayError, ArithmeticError):
    """A state component became NaN or infinite during integration"""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class OutOfRange(HivDelayError, ValueError):
    """A trajectory was sampled outside [-tau, t_end]"""


class GridMismatch(HivDelayError, ValueError):
    """Trajectory, adjoint and control samples do not share a grid"""


class EquilibriumAbsent(HivDelayError, LookupError):
    """The requested equilibrium does not exist for these parameters"""


class NoBracket(HivDelayError, RuntimeError):
    """The switching-time cost has no interior minimum on [0, t_f]"""


class NotConverged(HivDelayError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance"""
