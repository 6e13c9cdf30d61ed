"""Exception hierarchy shared by the fourbody modules."""


class FourBodyError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(FourBodyError):
    """Operands disagree in degree, dimension, or scalar kind."""


class SingularLeadingTermError(FourBodyError):
    """Fractional power of a series whose constant term is too close to zero."""


class UndefinedTailRatioError(FourBodyError):
    """Tail ratio requested for a series with zero norm."""


class DomainError(FourBodyError):
    """Requested subinterval escapes the reference domain [-1, 1]."""


class DegenerateConfigurationError(FourBodyError):
    """Mass triple produces a degenerate primary configuration (K = 0)."""


class SingularityError(FourBodyError):
    """State too close to a primary body for the vector field to be evaluated."""


class ResonanceError(FourBodyError):
    """Near-singular homological matrix in the parameterization recursion."""


class NonConvergenceError(FourBodyError):
    """An iterative solver diverged or exhausted its iteration budget."""


class StepRejectedError(FourBodyError):
    """A trial advection step was rejected (blowup or singularity proximity)."""


class StallError(FourBodyError):
    """No admissible integration step above the minimum step size."""


class ConfigurationError(FourBodyError):
    """Inconsistent run configuration or mismatched artifacts."""


class RefinementFailureError(FourBodyError):
    """The boundary-value Newton solver failed to converge."""
