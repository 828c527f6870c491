"""Exception types raised across the package."""


class S2CubicError(Exception):
    """Base class for all package errors."""


class SingularDerivative(S2CubicError):
    """x' is too close to zero to evaluate the third derivative."""


class StepSizeUnderflow(S2CubicError):
    """The adaptive step collapsed; ``t_last`` is the last reliable time."""

    def __init__(self, message, t_last=None):
        super().__init__(message)
        self.t_last = t_last


class NonPositiveX(S2CubicError):
    """A logarithmic reduction was requested where x <= 0."""


class SingularQ(S2CubicError):
    """The non-regularised planar field was evaluated too close to q = 0."""


class ManifoldEscape(S2CubicError):
    """A traced invariant manifold left the quadrant it was requested in."""


class PoorConvergence(S2CubicError):
    """An extrapolation did not settle within tolerance."""


class Inconclusive(S2CubicError):
    """A probe reached its time horizon without a decision."""


class BracketFailure(S2CubicError):
    """Could not establish a sign-changing bracket for bisection."""


class SingularDenominator(S2CubicError):
    """g - 2 s g' vanished during integration of the g-equation."""


class DomainError(S2CubicError, ValueError):
    """A parameter lies outside the range where an object is defined."""


class DegenerateDerivative(S2CubicError):
    """psi' vanishes where a formula divides by it."""


class DegenerateDenominator(S2CubicError):
    """The family-B denominator psi'^2 - psi^2 + b vanishes."""


class NonPositiveLambda(S2CubicError):
    """The conformal factor is not positive at the requested point."""


class DegenerateMetric(NonPositiveLambda):
    """The metric degenerates where the cubic integral is evaluated."""


class UnboundedDiagnostic(S2CubicError):
    """Asymptotic and grid values of psi^2 - psi'^2 disagree."""


class ChartMismatch(S2CubicError, ValueError):
    """Unknown polar chart identifier."""


class ChartExit(S2CubicError):
    """A phase trajectory left the region covered by the (phi, y) chart."""


class QuadratureFailure(S2CubicError):
    """Adaptive quadrature did not reach the requested accuracy."""


class NoOverlap(S2CubicError):
    """Two profiles share no common y-range."""


class NoStationaryPoint(S2CubicError):
    """No zero of psi' was found."""


class FixtureMismatch(S2CubicError):
    """A fixture file does not match its recorded hash."""
