"""Exception types raised by the solvers and transforms."""


class EpslabError(Exception):
    """Base class for all package errors."""


class AdmissibilityLost(EpslabError):
    """A potential left the admissible cone 1 - Lap(phi) >= margin."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NewtonDiverged(EpslabError):
    def __init__(self, message, s=None, residual=None):
        super().__init__(message)
        self.s = s
        self.residual = residual


class StepTooSmall(EpslabError):
    """Continuation step underflow (below 2**-20)."""


class NotConverged(EpslabError):
    def __init__(self, message, sweeps=None, residual=None):
        super().__init__(message)
        self.sweeps = sweeps
        self.residual = residual


class FreeBoundaryTouchesSlab(EpslabError):
    """Active set reached within two nodes of a slab cap; enlarge M."""


class NonContiguousActiveSet(EpslabError):
    """A slab column's active set has interior gaps."""


class NonMonotoneTheta(EpslabError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class VanishingVerticalDerivative(EpslabError):
    """d(theta)/dz is not positive where the flux formula divides by it."""


class NotStrictlyConvexInT(EpslabError):
    """A path is not strictly convex in t, so its conjugate degenerates."""


class SlabTooSmall(EpslabError):
    """Slab half-height M does not cover the range of d(Phi)/dt."""


class BlowUp(EpslabError):
    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class NotNormalized(EpslabError):
    """A density does not integrate to the torus volume."""


class NotPositive(EpslabError):
    """A quantity required to be positive is not."""
