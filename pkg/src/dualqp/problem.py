"""QP data model, constraint normalization, and primal-side evaluations.

The user-facing format is a box-constrained QP with two-sided linear
constraints::

    minimize  0.5 u'Qu + q'u   over  u in [lb, ub]
    s.t.      clb <= Gbar u + gbar <= cub

Solvers work on the normalized one-sided form ``G u + g <= 0`` produced by
:func:`normalize`; equality rows (clb == cub) become two opposing inequality
rows so the dual cone stays the nonnegative orthant.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import DataValidationError, DimensionError
from .linalg import Box

#: Lower clamp for the dual gradient's Lipschitz constant.  A vacuous
#: constraint mapping (G == 0) has a constant dual gradient, so any positive
#: value is a valid Lipschitz constant; the clamp keeps step sizes finite.
L_D_FLOOR = 1e-12


@dataclass(frozen=True)
class QpProblem:
    """Box-constrained QP with two-sided linear constraints."""

    Q: np.ndarray
    q: np.ndarray
    box: Box
    Gbar: np.ndarray
    gbar: np.ndarray
    clb: np.ndarray
    cub: np.ndarray

    def __post_init__(self):
        Q = linalg.as_matrix(self.Q, "Q")
        q = linalg.as_vector(self.q, "q")
        n = q.shape[0]
        if Q.shape != (n, n):
            raise DimensionError(f"Q must be {n}x{n}, got {Q.shape}")
        if self.box.n != n:
            raise DimensionError(f"box has {self.box.n} entries, expected {n}")
        Gbar = linalg.as_matrix(self.Gbar, "Gbar")
        gbar = linalg.as_vector(self.gbar, "gbar")
        m = gbar.shape[0]
        if Gbar.shape != (m, n):
            raise DimensionError(f"Gbar must be {m}x{n}, got {Gbar.shape}")
        clb = linalg.as_vector(self.clb, "clb", allow_infinite=True)
        cub = linalg.as_vector(self.cub, "cub", allow_infinite=True)
        if clb.shape[0] != m or cub.shape[0] != m:
            raise DimensionError("clb/cub must have one entry per Gbar row")
        if np.any(clb > cub):
            raise DataValidationError("constraint invariant clb <= cub violated")
        if m and np.any(np.isinf(clb) & np.isinf(cub)):
            raise DataValidationError(
                "vacuous constraint row: both clb and cub are infinite"
            )
        for name, val in (
            ("Q", Q), ("q", q), ("Gbar", Gbar), ("gbar", gbar),
            ("clb", clb), ("cub", cub),
        ):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def m(self) -> int:
        return self.gbar.shape[0]


@dataclass(frozen=True)
class NormalizedQp:
    """QP with constraints in one-sided form ``G u + g <= 0``."""

    Q: np.ndarray
    q: np.ndarray
    box: Box
    G: np.ndarray
    g: np.ndarray

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def p(self) -> int:
        return self.g.shape[0]


@dataclass(frozen=True)
class ProblemConstants:
    """Smoothness/geometry constants the solver and certificates consume.

    sigma_f, L_f   strong convexity / gradient Lipschitz constants of the cost
    c_g            Frobenius norm of G (Jacobian bound of the constraints)
    L_d            Lipschitz constant of the dual gradient, ||G||^2 / sigma_f
    Lbar_f         bound on max ||grad f|| over the box (+inf if unbounded)
    R_p            box diameter (+inf if unbounded)
    R_d_default    standing fallback for the unknown dual-optimum distance
    """

    sigma_f: float
    L_f: float
    c_g: float
    L_d: float
    Lbar_f: float
    R_p: float
    R_d_default: float


def normalize(p: QpProblem) -> NormalizedQp:
    """Rewrite two-sided rows as one-sided rows ``G u + g <= 0``.

    Each finite upper bound contributes the row ``(Gbar_i, gbar_i - cub_i)``;
    each finite lower bound contributes ``(-Gbar_i, clb_i - gbar_i)``.
    Equality rows therefore become two opposing rows.
    """
    rows = []
    offs = []
    for i in range(p.m):
        finite_any = False
        if math.isfinite(p.cub[i]):
            rows.append(p.Gbar[i])
            offs.append(p.gbar[i] - p.cub[i])
            finite_any = True
        if math.isfinite(p.clb[i]):
            rows.append(-p.Gbar[i])
            offs.append(p.clb[i] - p.gbar[i])
            finite_any = True
        if not finite_any:
            raise DataValidationError(
                f"vacuous constraint row {i}: both clb and cub are infinite"
            )
    if rows:
        G = np.ascontiguousarray(np.vstack(rows))
        g = np.asarray(offs, dtype=np.float64)
    else:
        G = np.zeros((0, p.n))
        g = np.zeros(0)
    return NormalizedQp(Q=p.Q, q=p.q, box=p.box, G=G, g=g)


def constants(nqp: NormalizedQp) -> ProblemConstants:
    """Compute the problem constants (requires Q positive definite)."""
    sigma_f, L_f = linalg.eig_extremes_spd(nqp.Q)
    c_g = linalg.frobenius_norm(nqp.G)
    norm_G = linalg.spectral_norm(nqp.G)
    L_d = max(norm_G ** 2 / sigma_f, L_D_FLOOR)
    box = nqp.box
    if box.is_bounded:
        # max of ||u|| over the box is separable: each coordinate attains
        # max(lb_i^2, ub_i^2).
        max_norm = math.sqrt(float(np.sum(np.maximum(box.lb ** 2, box.ub ** 2))))
        Lbar_f = L_f * max_norm + float(np.linalg.norm(nqp.q))
    else:
        Lbar_f = math.inf
    R_p = box.diameter()
    if c_g > 0.0:
        R_d_default = max(1.0, 1.0 / c_g, L_f / c_g)
    else:
        R_d_default = 1.0
    return ProblemConstants(
        sigma_f=sigma_f, L_f=L_f, c_g=c_g, L_d=L_d,
        Lbar_f=Lbar_f, R_p=R_p, R_d_default=R_d_default,
    )


def objective(nqp: NormalizedQp, u: np.ndarray) -> float:
    """Cost ``f(u) = 0.5 u'Qu + q'u``."""
    return 0.5 * float(u @ linalg.mat_vec(nqp.Q, u)) + float(nqp.q @ u)


def constraint_value(nqp: NormalizedQp, u: np.ndarray) -> np.ndarray:
    """Constraint mapping ``g(u) = G u + g``."""
    if nqp.p == 0:
        return np.zeros(0)
    return linalg.mat_vec(nqp.G, u) + nqp.g


def infeasibility(nqp: NormalizedQp, u: np.ndarray) -> float:
    """Euclidean norm of the constraint violation, ``||[G u + g]_+||``."""
    if nqp.p == 0:
        return 0.0
    return float(np.linalg.norm(linalg.nonneg_project(constraint_value(nqp, u))))


def _check_multiplier(x: np.ndarray, p: int):
    if x.shape[0] != p:
        raise DimensionError(f"multiplier has {x.shape[0]} entries, expected {p}")
    if p and np.any(x < 0.0):
        raise DataValidationError(
            "dual feasibility violated: multiplier has a negative component"
        )


def lagrangian(nqp: NormalizedQp, u: np.ndarray, x: np.ndarray) -> float:
    """Lagrangian ``L(u, x) = f(u) + <x, G u + g>`` for ``x >= 0``."""
    _check_multiplier(x, nqp.p)
    val = objective(nqp, u)
    if nqp.p:
        val += float(x @ constraint_value(nqp, u))
    return val


def lagrangian_grad(nqp: NormalizedQp, u: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Gradient ``Qu + q + G'x`` of the Lagrangian in ``u``."""
    _check_multiplier(x, nqp.p)
    grad = linalg.mat_vec(nqp.Q, u) + nqp.q
    if nqp.p:
        grad += linalg.mat_vec(nqp.G.T, x)
    return grad


def dual_inexact_grad(nqp: NormalizedQp, u_tilde: np.ndarray) -> np.ndarray:
    """Inexact dual gradient ``G u_tilde + g`` at an approximate minimizer."""
    return constraint_value(nqp, u_tilde)


# --- JSON problem schema ----------------------------------------------------
#
# Object keys: "Q" (array of arrays, row-major), "q", "lb", "ub", "Gbar",
# "gbar", "clb", "cub".  Infinite bounds are encoded as JSON null; absent
# "clb"/"cub" keys mean all-infinite on that side.  Numbers are IEEE-754
# doubles and round-trip exactly.


def _bounds_from_json(values, length: int, fill: float) -> np.ndarray:
    if values is None:
        return np.full(length, fill)
    out = np.empty(length)
    if len(values) != length:
        raise DimensionError(
            f"bound array has {len(values)} entries, expected {length}"
        )
    for i, v in enumerate(values):
        out[i] = fill if v is None else float(v)
    return out


def _bounds_to_json(values: np.ndarray) -> list:
    return [None if math.isinf(v) else float(v) for v in values]


def problem_from_dict(data: dict) -> QpProblem:
    """Build a :class:`QpProblem` from the JSON object layout."""
    try:
        Q = data["Q"]
        q = data["q"]
    except KeyError as exc:
        raise DataValidationError(f"problem JSON is missing key {exc}") from exc
    q = linalg.as_vector(q, "q")
    n = q.shape[0]
    lb = _bounds_from_json(data.get("lb"), n, -math.inf)
    ub = _bounds_from_json(data.get("ub"), n, math.inf)
    gbar = data.get("gbar")
    if gbar is None:
        gbar = np.zeros(0)
        Gbar = np.zeros((0, n))
    else:
        gbar = linalg.as_vector(gbar, "gbar")
        Gbar = linalg.as_matrix(data.get("Gbar"), "Gbar")
    m = gbar.shape[0]
    clb = _bounds_from_json(data.get("clb"), m, -math.inf)
    cub = _bounds_from_json(data.get("cub"), m, math.inf)
    return QpProblem(Q=Q, q=q, box=Box(lb, ub), Gbar=Gbar, gbar=gbar,
                     clb=clb, cub=cub)


def problem_to_dict(p: QpProblem) -> dict:
    return {
        "Q": [[float(v) for v in row] for row in p.Q],
        "q": [float(v) for v in p.q],
        "lb": _bounds_to_json(p.box.lb),
        "ub": _bounds_to_json(p.box.ub),
        "Gbar": [[float(v) for v in row] for row in p.Gbar],
        "gbar": [float(v) for v in p.gbar],
        "clb": _bounds_to_json(p.clb),
        "cub": _bounds_to_json(p.cub),
    }


def load_problem(path) -> QpProblem:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataValidationError(f"malformed problem JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise DataValidationError("problem JSON must be an object")
    return problem_from_dict(data)


def save_problem(p: QpProblem, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(problem_to_dict(p), fh, sort_keys=True)
        fh.write("\n")
