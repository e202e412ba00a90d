class ConfigError(ValueError):
    """Invalid network description or parameters."""


class AllocationError(RuntimeError):
    """The allocation solver did not reach the KKT tolerance.

    ``best`` holds the last iterate as an :class:`~fairflow.allocator.Allocation`
    (or :class:`~fairflow.manifold.LiftResult` for the lift).
    """

    def __init__(self, message, best=None, residual=float("nan")):
        super().__init__(message)
        self.best = best
        self.residual = residual


class InvariantViolation(RuntimeError):
    """A monotonicity or feasibility property failed beyond tolerance."""


class EventCapExceeded(RuntimeError):
    pass


class HorizonTooShort(ValueError):
    pass


class GridCoverageError(ValueError):
    pass
