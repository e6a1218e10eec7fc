"""Exception hierarchy shared by every module of the package."""


class ISNLSError(Exception):
    """Base class for all package errors."""


class InvalidField(ISNLSError, ValueError):
    pass


class InvalidMultiplier(ISNLSError, ValueError):
    pass


class GridMismatch(ISNLSError, ValueError):
    pass


class InvalidRegularity(ISNLSError, ValueError):
    pass


class NormDiverges(ISNLSError, ArithmeticError):
    pass


class ScalingGridError(ISNLSError, ValueError):
    pass


class RegularityOutOfRange(ISNLSError, ValueError):
    pass


class LedgerNeedsPath(ISNLSError, ValueError):
    pass


class ConfigError(ISNLSError, ValueError):
    pass


class FormatError(ISNLSError, ValueError):
    pass


class BlowUpDetected(ISNLSError, ArithmeticError):
    """Raised when a trajectory leaves the representable or admissible range.

    ``time`` is the simulation time at which the trip happened.
    """

    def __init__(self, time, message=None):
        self.time = float(time)
        super().__init__(message or f"blow-up detected at t={self.time:.6g}")
