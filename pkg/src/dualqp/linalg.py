"""Dense vector/matrix kernels, spectral estimates, and projections.

This is the only module that computes matrix-vector products or eigenvalue
extremes.  Python-level products go through :func:`mat_vec`, which times each
call and feeds the global :data:`COUNTER`; the jitted hot loops use
:func:`matvec_nb` and report their product counts back to the same counter
(see :func:`calibrate_matvec_seconds` for how their time share is measured).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DataValidationError, DimensionError, NotStronglyConvexError


def as_vector(x, name: str = "vector", allow_infinite: bool = False) -> np.ndarray:
    """Coerce to a contiguous 1-D float64 array and validate entries."""
    v = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if v.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {v.shape}")
    if np.any(np.isnan(v)):
        raise DataValidationError(f"{name} contains NaN entries")
    if not allow_infinite and not np.all(np.isfinite(v)):
        raise DataValidationError(f"{name} contains non-finite entries")
    return v


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a contiguous 2-D float64 array with finite entries."""
    m = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if m.ndim != 2:
        raise DimensionError(f"{name} must be two-dimensional, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DataValidationError(f"{name} contains non-finite entries")
    return m


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lb, ub]``; infinite bounds are allowed."""

    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        lb = as_vector(self.lb, "box lower bound", allow_infinite=True)
        ub = as_vector(self.ub, "box upper bound", allow_infinite=True)
        if lb.shape != ub.shape:
            raise DimensionError(
                f"box bounds disagree in length: {lb.shape[0]} vs {ub.shape[0]}"
            )
        if np.any(lb > ub):
            raise DataValidationError("box invariant lb <= ub violated")
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @property
    def n(self) -> int:
        return self.lb.shape[0]

    @property
    def is_bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.lb)) and np.all(np.isfinite(self.ub)))

    def diameter(self) -> float:
        """Euclidean diameter ``||ub - lb||``, or +inf for an unbounded box."""
        if not self.is_bounded:
            return math.inf
        return float(np.linalg.norm(self.ub - self.lb))


class MatVecCounter:
    """Running tally of matrix-vector products and the wall time they took."""

    __slots__ = ("calls", "seconds")

    def __init__(self):
        self.calls = 0
        self.seconds = 0.0

    def reset(self):
        self.calls = 0
        self.seconds = 0.0

    def add(self, calls: int, seconds: float):
        self.calls += calls
        self.seconds += seconds

    def snapshot(self) -> tuple[int, float]:
        return self.calls, self.seconds


#: Process-wide counter.  Solvers snapshot it around a run to report what
#: fraction of the wall time went into matrix-vector products.
COUNTER = MatVecCounter()


def mat_vec(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Timed dense product ``M @ v``.

    Raises
    ------
    DimensionError
        If ``M.shape[1] != len(v)``.
    """
    if M.ndim != 2 or v.ndim != 1:
        raise DimensionError(
            f"mat_vec expects a matrix and a vector, got shapes {M.shape}, {v.shape}"
        )
    if M.shape[1] != v.shape[0]:
        raise DimensionError(
            f"mat_vec dimension mismatch: matrix has {M.shape[1]} columns, "
            f"vector has {v.shape[0]} entries"
        )
    t0 = time.perf_counter()
    out = M @ v
    COUNTER.seconds += time.perf_counter() - t0
    COUNTER.calls += 1
    return out


@njit(cache=True)
def matvec_nb(M, v):  # pragma: no cover - exercised through jitted callers
    """Jitted dense product for use inside compiled hot loops."""
    return np.dot(M, v)


@njit(cache=True)
def _matvec_reps(M, v, reps):  # pragma: no cover - timing helper
    acc = 0.0
    for _ in range(reps):
        r = np.dot(M, v)
        acc += r[0]
    return acc


def calibrate_matvec_seconds(M: np.ndarray, reps: int = 2000, rounds: int = 3) -> float:
    """Measure the per-call cost of a jitted product with ``M``.

    Used to attribute wall time to the products performed inside compiled
    kernels, where per-call timers are unavailable.  Returns the best (lowest)
    per-call time over ``rounds`` timed loops so transient stalls do not
    inflate the attribution.
    """
    v = np.ones(M.shape[1])
    _matvec_reps(M, v, 2)  # warm the JIT before timing
    best = math.inf
    for _ in range(rounds):
        t0 = time.perf_counter()
        _matvec_reps(M, v, reps)
        best = min(best, (time.perf_counter() - t0) / reps)
    return best


def _symmetrize(Q: np.ndarray) -> np.ndarray:
    return 0.5 * (Q + Q.T)


def eig_extremes_spd(Q) -> tuple[float, float]:
    """Extreme eigenvalues ``(lambda_min, lambda_max)`` of an SPD matrix.

    The input is symmetrized as ``(Q + Q^T)/2`` first.  Raises
    :class:`NotStronglyConvexError` when ``lambda_min <= 0``: every guarantee
    in this package needs a strongly convex cost.
    """
    Q = as_matrix(Q, "Q")
    if Q.shape[0] != Q.shape[1]:
        raise DimensionError(f"Q must be square, got shape {Q.shape}")
    w = np.linalg.eigvalsh(_symmetrize(Q))
    lam_min, lam_max = float(w[0]), float(w[-1])
    if lam_min <= 0.0:
        raise NotStronglyConvexError(
            f"strong convexity of the objective violated: lambda_min(Q) = "
            f"{lam_min:.6e} <= 0"
        )
    return lam_min, lam_max


def spectral_norm(M) -> float:
    """Operator 2-norm ``||M|| = sqrt(lambda_max(M^T M))``."""
    M = as_matrix(M, "M")
    if M.size == 0:
        return 0.0
    # Form the Gram matrix on the smaller side; its top eigenvalue is exact
    # to machine precision via the symmetric eigensolver.
    if M.shape[0] <= M.shape[1]:
        gram = M @ M.T
    else:
        gram = M.T @ M
    lam = float(np.linalg.eigvalsh(_symmetrize(gram))[-1])
    return math.sqrt(max(lam, 0.0))


def frobenius_norm(M) -> float:
    """Frobenius norm ``sqrt(sum_ij M_ij^2)``."""
    M = as_matrix(M, "M")
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M))


def box_project(v: np.ndarray, box: Box) -> np.ndarray:
    """Componentwise clamp of ``v`` onto the box."""
    if v.shape[0] != box.n:
        raise DimensionError(
            f"box_project dimension mismatch: vector has {v.shape[0]} entries, "
            f"box has {box.n}"
        )
    return np.clip(v, box.lb, box.ub)


def nonneg_project(v: np.ndarray) -> np.ndarray:
    """Projection onto the nonnegative orthant; -0.0 is normalized to +0.0."""
    return np.maximum(v, 0.0) + 0.0
