"""Exception types raised by the mesh, operator and solver layers."""


class NonConforming(ValueError):
    """Input triangulation has a hanging vertex or a non-manifold edge."""


class MatchingViolation(ValueError):
    """Refinement-edge assignment of the initial mesh is not matched."""


class DegenerateTriangle(ValueError):
    """Triangle with (numerically) zero area or a repeated vertex."""


class NotALeaf(ValueError):
    """Bisection requested on a node that already has children."""


class ClosureDepthExceeded(RuntimeError):
    """Conforming closure recursed deeper than the leaf count."""


class LevelMismatch(ValueError):
    """Vector does not belong to the mesh level it was used with."""


class MeshTooLarge(ValueError):
    """Dense oracle requested on a mesh beyond desk scale."""


class SizeMismatch(ValueError):
    """Operand length does not match the operator's dimension."""


class SingularOperand(ValueError):
    """Spectral radius of a calibration operand is (numerically) zero."""


class OpenSurface(ValueError):
    """Surface assembly requires a closed surface but a boundary edge exists."""


class QuadratureBreakdown(ArithmeticError):
    """A quadrature produced a non-finite value."""


class NotConverged(RuntimeError):
    """Iteration budget exhausted before reaching the requested tolerance."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class InnerProductBreakdown(ArithmeticError):
    """Energy inner product turned non-positive; operator is not SPD."""


class IoFailure(OSError):
    """Report emission failed."""
