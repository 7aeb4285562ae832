"""Exception hierarchy shared by all openqw modules."""


class OpenQWError(Exception):
    """Base class for library errors."""


class InvalidArgumentError(OpenQWError, ValueError):
    pass


class GapClosureError(OpenQWError):
    """The quasienergy gap closes (U = +/-I) so the Bloch vector is undefined."""

    def __init__(self, message, quasienergy=None, momentum=None):
        super().__init__(message)
        self.quasienergy = quasienergy
        self.momentum = momentum


class GridTooCoarseError(OpenQWError):
    pass


class RankDeficiencyError(OpenQWError):
    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class ConvergenceError(OpenQWError):
    """Optimizer exhausted its budget; ``best`` holds the best result found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DegenerateMomentumWeightError(OpenQWError):
    pass
