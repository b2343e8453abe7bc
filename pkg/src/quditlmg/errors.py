"""Exception types raised across the package."""


class QuditLMGError(Exception):
    pass


class CapacityError(QuditLMGError):
    """A requested object would exceed the configured size limit."""

    def __init__(self, message, dimension=None, limit=None):
        super().__init__(message)
        self.dimension = dimension
        self.limit = limit


class StiffnessError(QuditLMGError):
    """Adaptive step size fell below the allowed minimum."""

    def __init__(self, message, t_reached):
        super().__init__(message)
        self.t_reached = t_reached


class ConvergenceError(QuditLMGError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SymmetryViolationError(QuditLMGError):
    pass


class NonUniqueSteadyState(QuditLMGError):
    pass


class ConditionViolation(QuditLMGError):
    def __init__(self, message, offending=()):
        super().__init__(message)
        self.offending = tuple(offending)
