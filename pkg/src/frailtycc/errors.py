"""Exception hierarchy for frailtycc."""


class FrailtyCCError(Exception):
    """Base class for all frailtycc errors."""


class DomainError(FrailtyCCError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class QuadratureError(FrailtyCCError):
    """Numerical integration failed to reach the requested accuracy."""


class DataFormatError(FrailtyCCError, ValueError):
    """A dataset file or record is malformed."""


class HazardEstimationError(FrailtyCCError):
    """A baseline-hazard stage is degenerate or failed to converge."""


class NonConvergenceError(FrailtyCCError):
    """The outer estimation loop did not converge; carries the trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class SingularJacobianError(FrailtyCCError):
    """The estimating-equation Jacobian is singular to tolerance."""


class BootstrapError(FrailtyCCError):
    """Too many bootstrap replicates failed."""


class SimulationError(FrailtyCCError):
    """Data generation failed (e.g. rejection budget exhausted)."""
