"""Exception types raised across the package.

Every error message names the violated invariant so CLI users can see which
piece of problem data (or which solver precondition) broke.
"""


class DualQpError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(DualQpError, ValueError):
    """Operand shapes are inconsistent."""


class DataValidationError(DualQpError, ValueError):
    """Problem data violates a structural invariant (NaN, bad bounds, ...)."""


class NotStronglyConvexError(DualQpError, ValueError):
    """The cost Hessian is not positive definite, so the inner subproblems
    are not strongly convex and none of the method's guarantees apply."""


class CertificateUnavailableError(DualQpError, ValueError):
    """A complexity certificate was requested but requires a compact primal
    box (last-iterate certificates) or a nonvacuous constraint mapping."""


class InnerSolveError(DualQpError, RuntimeError):
    """The inner solver exhausted its iteration budget without certifying
    the requested accuracy."""


class OracleError(DualQpError, RuntimeError):
    """The enumeration oracle failed to produce a KKT-verified solution."""
