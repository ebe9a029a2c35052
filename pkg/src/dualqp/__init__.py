"""Inexact dual first-order methods for box-constrained convex QPs.

Solves  min 0.5 u'Qu + q'u  over a box, s.t. clb <= Gbar u + gbar <= cub,
through its Lagrangian dual: the inner problem is handled by an accelerated
projected-gradient method to a certified gap, the outer multipliers by a
dual (fast) gradient method driven by the resulting inexact dual gradients.
Ships with a-priori complexity certificates, a benchmark harness with an
exact small-scale oracle, and a condensed-MPC closed-loop simulator.
"""

from .certify import Certificate, certificate, delta_rule, outer_bound
from .errors import (
    CertificateUnavailableError,
    DataValidationError,
    DimensionError,
    DualQpError,
    InnerSolveError,
    NotStronglyConvexError,
    OracleError,
)
from .inner import InnerConfig, InnerResult, inner_iteration_bound, solve_inner
from .linalg import Box
from .outer import SolveConfig, SolveResult, SolveStatus, solve
from .problem import (
    NormalizedQp,
    ProblemConstants,
    QpProblem,
    constants,
    load_problem,
    normalize,
    save_problem,
)
from .variants import Recovery, Variant

__version__ = "0.1.0"

__all__ = [
    "Box",
    "Certificate",
    "CertificateUnavailableError",
    "DataValidationError",
    "DimensionError",
    "DualQpError",
    "InnerConfig",
    "InnerResult",
    "InnerSolveError",
    "NormalizedQp",
    "NotStronglyConvexError",
    "OracleError",
    "ProblemConstants",
    "QpProblem",
    "Recovery",
    "SolveConfig",
    "SolveResult",
    "SolveStatus",
    "Variant",
    "certificate",
    "constants",
    "delta_rule",
    "inner_iteration_bound",
    "load_problem",
    "normalize",
    "outer_bound",
    "save_problem",
    "solve",
    "solve_inner",
]
