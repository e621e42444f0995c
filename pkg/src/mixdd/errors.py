"""Exception types raised by the solver stack."""


class MixddError(Exception):
    """Base class for all solver errors."""


class AssemblyError(MixddError):
    """Fatal finite-element assembly failure (degenerate element, bad mesh)."""


class PartitionError(MixddError):
    """Invalid substructuring (empty subdomain, unusable complement)."""


class ImpedanceError(MixddError):
    """Interface impedance is not admissible (loss of positive definiteness)."""


class LocalSolveError(MixddError):
    """A local Newton solve failed to converge.

    Carries the residual history of the failed solve so the caller can
    report the divergence trace.
    """

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class KrylovError(MixddError):
    """An interface Krylov solve failed (stagnation, breakdown, max iterations).

    The partially filled report is attached when available.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class GlobalSolveError(MixddError):
    """The outer Newton loop over an increment did not converge."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
