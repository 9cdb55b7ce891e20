"""Exception hierarchy shared by all modules."""


class DistMatchError(Exception):
    """Base class for every error raised by the package."""


class EmptySupport(DistMatchError, ValueError):
    pass


class BadCovariance(DistMatchError, ValueError):
    pass


class InvalidMeasure(DistMatchError, ValueError):
    pass


class SolverFailure(DistMatchError, RuntimeError):
    """The exact transport solver could not finish. Signals an internal bug."""


class CapacityShortfall(DistMatchError):
    """Residual capacity cannot absorb an agent's mass.

    ``remainder`` is the unallocated mass and ``pairs`` the partial
    allocation made before capacity ran out.
    """

    def __init__(self, remainder, pairs=()):
        super().__init__(f"residual capacity short by {remainder:.3e}")
        self.remainder = remainder
        self.pairs = list(pairs)


class OverAllocation(DistMatchError, ValueError):
    pass


class EmptyPlan(DistMatchError, ValueError):
    pass


class NotControllable(DistMatchError, ValueError):
    pass


class GramianIllConditioned(DistMatchError, ArithmeticError):
    pass


class NoConvergence(DistMatchError, RuntimeError):
    """Iterative control solver hit its iteration cap.

    The best iterate found is kept on ``best`` (a ControlSequence).
    """

    def __init__(self, message, best=None, grad_norm=float("nan")):
        super().__init__(message)
        self.best = best
        self.grad_norm = grad_norm


class InvariantViolation(DistMatchError, AssertionError):
    pass


class ConfigError(DistMatchError, ValueError):
    """Bad scenario configuration. ``key`` is the dotted path of the culprit."""

    def __init__(self, key, reason):
        super().__init__(f"{key}: {reason}")
        self.key = key
        self.reason = reason
