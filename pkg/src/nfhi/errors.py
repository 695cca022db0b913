"""Exception types raised across the package."""


class NfhiError(Exception):
    """Base class for all package errors."""


class InvalidArgument(NfhiError, ValueError):
    pass


class NumericError(NfhiError, ArithmeticError):
    pass


class InsufficientBaseline(NfhiError):
    """Fewer than two usable subarrays remain after partitioning."""


class DegenerateGeometry(NfhiError):
    """Bearing lines do not pin down a unique intersection."""


class GridError(NfhiError):
    """A search grid cannot hold the requested number of peaks."""


class DivergenceError(NfhiError):
    """An iterative solver's objective kept increasing.

    The last iterate is kept on ``self.iterate`` so callers can inspect it.
    """

    def __init__(self, message, iterate=None):
        super().__init__(message)
        self.iterate = iterate


class ConvergenceError(NfhiError):
    def __init__(self, message, best=None, objective=None):
        super().__init__(message)
        self.best = best
        self.objective = objective
