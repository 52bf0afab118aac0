"""Exception and warning types raised by stiffrelax."""


class StiffRelaxError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(StiffRelaxError, ValueError):
    pass


class NonFiniteMatrix(StiffRelaxError):
    pass


class EigenFailure(StiffRelaxError):
    pass


class SingularFastMatrix(StiffRelaxError):
    pass


class NotAffine(StiffRelaxError):
    """A closed-form operation was requested on a system with a non-affine coupling."""


class NonFiniteState(StiffRelaxError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class GridMismatch(StiffRelaxError):
    pass


class CflViolation(StiffRelaxError):
    def __init__(self, message, node=None, control=None, courant=None):
        super().__init__(message)
        self.node = node
        self.control = control
        self.courant = courant


class NonFiniteValue(StiffRelaxError):
    pass


class GridTooLarge(StiffRelaxError):
    def __init__(self, message, nodes=None):
        super().__init__(message)
        self.nodes = nodes


class NoConvergence(StiffRelaxError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DensityFloor(StiffRelaxError):
    pass


class NegativeTemperature(StiffRelaxError):
    pass


class LayoutMismatch(StiffRelaxError):
    pass


class BoundsExceeded(StiffRelaxError):
    pass


class ConfigError(StiffRelaxError):
    pass


class BoundsExceededWarning(RuntimeWarning):
    """The fast state left the configured monitoring box during integration."""
