"""Exception hierarchy shared by all modules."""


class ZDShapeError(Exception):
    """Base class for all package errors."""


class DomainError(ZDShapeError, ValueError):
    """A parameter lies outside its admissible box."""


class Unreachable(ZDShapeError):
    """Newton configuration solve did not converge (target outside the workspace)."""


class SingularPartition(ZDShapeError):
    """The internal-coordinate Jacobian is singular at this configuration."""


class InputSingularity(ZDShapeError):
    """The input gain on the controlled output vanishes."""


class StructureError(ZDShapeError):
    """The zero-dynamics right-hand side is not quadratic in the velocity."""


class NoEquilibrium(ZDShapeError):
    """No sign change of the zero-dynamics restoring term was found."""


class EscapedDomain(ZDShapeError):
    """A simulation left the region where the minimal form is defined.

    ``partial`` holds whatever was computed before the failure.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class NotPeriodic(ZDShapeError):
    """Fewer than two qualifying section crossings were found."""


class AllInfeasible(ZDShapeError):
    """An optimizer never sampled a feasible design."""


class Uncontrollable(ZDShapeError):
    """The periodic linearization has a (numerically) singular Gramian."""


class RiccatiDiverged(ZDShapeError):
    """The backward Riccati sweep did not reach a periodic solution."""


class DegenerateOrbit(ZDShapeError):
    """An orbit with zero extent in position or velocity."""
