"""Exception hierarchy shared across the package.

Two broad families matter for the command line tool: ``ValidationError``
(bad inputs, violated preconditions -- exit code 3) and ``NumericalError``
(a computation that started from valid inputs failed to reach the requested
accuracy or a factorization broke down -- exit code 4).
"""


class KolmoLabError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(KolmoLabError):
    """Input or precondition violation."""


class NumericalError(KolmoLabError):
    """Numerical failure on otherwise valid inputs."""


# -- structure / group layer -------------------------------------------------

class ShapeMismatch(ValidationError):
    """Block or vector dimensions are inconsistent."""


class MonotonicityViolation(ValidationError):
    """Block row counts must not increase along the chain."""


class RankDeficient(ValidationError):
    """A structure block fails the full-row-rank requirement."""


class NonPositiveTime(ValidationError):
    """An operation required t > 0."""


class NonPositiveScale(ValidationError):
    """Dilations are defined for r > 0 only."""


# -- kernel layer ------------------------------------------------------------

class SingularCovariance(NumericalError):
    """The time-1 covariance is numerically singular."""


class GridTooCoarse(NumericalError):
    """Quadrature error estimate exceeds the requested tolerance."""


# -- convolution layer -------------------------------------------------------

class IncompatibleGrids(ValidationError):
    """Fields live on grids that cannot be combined."""


class ExponentMismatch(ValidationError):
    """Exponents fail the required algebraic relation."""


class ExponentOutOfRange(ValidationError):
    """A Lebesgue exponent left its admissible interval."""


# -- sampling layer ----------------------------------------------------------

class FactorizationFailure(NumericalError):
    """Covariance factorization failed (matrix not positive definite)."""


# -- finite-difference layer -------------------------------------------------

class CFLViolation(ValidationError):
    """Explicit transport step exceeds the stability limit."""


class EllipticityViolation(ValidationError):
    """Diffusion coefficients leave the prescribed ellipticity band."""


class HypothesisViolation(ValidationError):
    """Coefficient audit for the maximum-principle check failed."""


class NotOnKBoundary(ValidationError):
    """Point does not lie on a transport face of the domain."""


# -- level-set iteration layer -----------------------------------------------

class InvalidTruncation(ValidationError):
    """Truncation levels must satisfy k < l."""


class Eps0OutOfRange(ValidationError):
    """eps0 must lie in (0, p0 - 1]."""


class InvalidQPrime(ValidationError):
    """Interpolated exponent q' must lie strictly between 1 and p0_hat."""


class QTildeTooSmall(ValidationError):
    """Bootstrap requires q_tilde > q0."""


class BadParameters(ValidationError):
    """Iteration lemma parameters out of range."""


class ScheduleStall(NumericalError):
    """Level energies failed to decrease along the schedule."""


class AuditFailure(ValidationError):
    """Supplied level bound is below the field's own prescribed data."""
