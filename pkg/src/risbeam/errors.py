"""Exception types shared across the package."""


class RisbeamError(Exception):
    """Base class for all package errors."""


class ValidationError(RisbeamError, ValueError):
    """Malformed or inconsistent input (shape mismatch, bad config, ...)."""


class NotPSDError(ValidationError):
    """A matrix required to be positive semidefinite is not."""


class SingularMatrixError(RisbeamError):
    """A matrix required to be invertible is (numerically) singular."""


class StepInfeasibleError(RisbeamError):
    """A convex subproblem reported infeasibility.

    Carries the solver status string so callers can distinguish a genuinely
    infeasible step from a numerical failure.
    """

    def __init__(self, message: str, status: str = "infeasible"):
        super().__init__(message)
        self.status = status


class RecoveryFailureError(RisbeamError):
    """Rank-one recovery found no feasible candidate, eigenvector included."""
