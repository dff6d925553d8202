"""Exception types raised across the package."""


class ViscohomError(Exception):
    """Base class for all package errors."""


class InvalidOrder(ViscohomError, ValueError):
    pass


class NoPeriodInWindow(ViscohomError):
    """No translate of the pore distribution window is an exact period."""


class GeometryViolation(ViscohomError, ValueError):
    pass


class EpsilonNotConforming(ViscohomError, ValueError):
    """1/eps is not an integer multiple of the pore-distribution period."""


class CoercivityViolation(ViscohomError, ValueError):
    """A coefficient sample is not symmetric positive definite."""


class PhaseError(ViscohomError, ValueError):
    """A phase required by an operator is empty or disconnected."""


class SolverDiverged(ViscohomError, RuntimeError):
    pass


class HistoryError(ViscohomError, ValueError):
    pass


class ShapeError(ViscohomError, ValueError):
    pass


class ConfigError(ViscohomError, ValueError):
    """Configuration text failed to parse or validate.

    ``field`` names the offending entry (dotted path) when known.
    """

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field
