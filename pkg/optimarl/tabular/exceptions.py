class OptimarlError(Exception):
    """Base class for every error raised by the tabular library."""


class DimensionError(OptimarlError, ValueError):
    """Array shapes that must agree do not."""


class NumericInputError(OptimarlError, ValueError):
    """NaN or infinite values where finite numbers are required."""


class DegenerateDistributionError(OptimarlError, ValueError):
    """A distribution with no positive mass."""


class NonConvergenceError(OptimarlError, RuntimeError):
    """An iterative solve ran out of iterations before meeting its tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class BoundaryPolicyError(OptimarlError, ValueError):
    """The operation needs a policy strictly inside the simplex."""


class StepSizeError(OptimarlError, ValueError):
    """A finite-difference step leaves the probability simplex."""


class PreconditionError(OptimarlError, ValueError):
    """Inputs violate a documented precondition."""


class ScopeError(OptimarlError, ValueError):
    """The algorithm was asked to run outside the setting it is derived for."""


class ConfigError(OptimarlError, ValueError):
    """Invalid experiment or environment configuration."""
