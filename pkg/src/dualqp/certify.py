"""Complexity certificates: inner-accuracy rules and iteration bounds.

For each (variant, recovery) pair the certificate fixes the largest inner
gap ``delta`` under which the recovered primal point is guaranteed
``eps``-optimal, together with the outer-iteration count at which that
happens and the total number of box projections (outer count times the
per-iteration inner bound).  All logarithms are natural.

The bounds depend on ``R_d``, the distance from the dual start (the origin)
to the dual optimal set, which is not observable a priori; callers either
pass a known value (benchmarks substitute the reference multiplier norm) or
fall back to the standing default stored in the problem constants.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

from .errors import CertificateUnavailableError, DataValidationError
from .problem import NormalizedQp, ProblemConstants
from .variants import Recovery, Variant

#: Guards against division by zero when a caller passes R_d = 0 (e.g. the
#: multiplier norm of a problem whose constraints are all inactive).
_R_D_FLOOR = 1e-12


def _validated(eps: float, r_d: float) -> float:
    if not (eps > 0.0):
        raise DataValidationError("eps must be positive")
    if not (r_d >= 0.0):
        raise DataValidationError("R_d must be nonnegative")
    return max(r_d, _R_D_FLOOR)


def _warn_small_r_d(consts: ProblemConstants, r_d: float):
    if r_d < consts.R_d_default:
        warnings.warn(
            f"R_d = {r_d:.3e} is below the standing default "
            f"{consts.R_d_default:.3e}; the printed bounds assume R_d at "
            f"least that large",
            stacklevel=3,
        )


def alpha(consts: ProblemConstants, r_d: float, p_theta: int) -> float:
    """Last-iterate constant ``max(1, (Lbar_f / (c_g R_d))^(2/p))``."""
    r_d = max(r_d, _R_D_FLOOR)
    if math.isinf(consts.Lbar_f):
        raise CertificateUnavailableError(
            "last-iterate certificate unavailable: the box is unbounded, so "
            "no Lipschitz bound on the cost exists"
        )
    if consts.c_g <= 0.0:
        raise CertificateUnavailableError(
            "last-iterate certificate unavailable: the constraint mapping is "
            "vacuous (c_g = 0)"
        )
    return max(1.0, (consts.Lbar_f / (consts.c_g * r_d)) ** (2.0 / p_theta))


def delta_rule(variant: Variant, recovery: Recovery, eps: float,
               consts: ProblemConstants, r_d: float) -> float:
    """Largest admissible inner gap for ``eps``-optimal recovery."""
    r_d = _validated(eps, r_d)
    _warn_small_r_d(consts, r_d)
    if recovery is Recovery.AVERAGE:
        if variant is Variant.IDGM:
            return eps / 3.0
        return eps ** 1.5 / (8.0 * math.sqrt(consts.L_d) * r_d)
    p = variant.p_theta
    a = alpha(consts, r_d, p)
    lr2 = consts.L_d * r_d * r_d
    return (lr2 / (2.0 * a ** (p - 1))) * (eps / (6.0 * lr2)) ** (4.0 - 2.0 / p)


def outer_bound(variant: Variant, recovery: Recovery, eps: float,
                consts: ProblemConstants, r_d: float) -> int:
    """Outer iterations after which the recovered point is eps-optimal."""
    r_d = _validated(eps, r_d)
    _warn_small_r_d(consts, r_d)
    lr2 = consts.L_d * r_d * r_d
    if recovery is Recovery.AVERAGE:
        if variant is Variant.IDGM:
            raw = 8.0 * lr2 / eps
        else:
            raw = math.sqrt(32.0 * lr2 / eps)
    else:
        p = variant.p_theta
        raw = alpha(consts, r_d, p) * (6.0 * lr2 / eps) ** (2.0 / p)
    return max(1, int(math.floor(raw)))


def total_projection_bound(variant: Variant, recovery: Recovery, eps: float,
                           consts: ProblemConstants, r_d: float,
                           r_p: float) -> int:
    """Total box projections (and cost-gradient evaluations) to eps-optimality."""
    r_d = _validated(eps, r_d)
    if not math.isfinite(r_p):
        raise CertificateUnavailableError(
            "projection certificate unavailable: requires a compact box "
            "(finite R_p)"
        )
    lr2 = consts.L_d * r_d * r_d
    cond_rt = math.sqrt(consts.L_f / consts.sigma_f)
    if recovery is Recovery.AVERAGE:
        if variant is Variant.IDGM:
            raw = 8.0 * cond_rt * (lr2 / eps) * math.log(
                consts.L_f * r_p * r_p / eps)
        else:
            raw = cond_rt * math.sqrt(32.0 * lr2 / eps) * math.log(
                4.0 * math.sqrt(consts.L_d) * consts.L_f * r_p * r_p * r_d
                / eps ** 1.5)
    else:
        p = variant.p_theta
        a = alpha(consts, r_d, p)
        raw = cond_rt * (6.0 * lr2 / eps) ** (2.0 / p) * (
            (4.0 - 2.0 / p) * math.log(6.0 * lr2 / eps)
            + math.log(consts.L_f * r_p * r_p * a ** (p - 1) / lr2))
    return max(1, int(math.floor(raw)))


@dataclass(frozen=True)
class Certificate:
    """Bundle of the accuracy rule and the iteration bounds for one run."""

    variant: Variant
    recovery: Recovery
    eps: float
    delta: float
    alpha: float | None
    outer_bound: int
    total_projection_bound: int | None
    R_d_used: float
    R_p_used: float

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "recovery": self.recovery.value,
            "eps": self.eps,
            "delta": self.delta,
            "alpha": self.alpha if self.alpha is not None else "unavailable",
            "outer_bound": self.outer_bound,
            "total_projection_bound": (
                self.total_projection_bound
                if self.total_projection_bound is not None else "unavailable"),
            "R_d_used": self.R_d_used,
            "R_p_used": (self.R_p_used if math.isfinite(self.R_p_used)
                         else "unavailable"),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def certificate(nqp: NormalizedQp, consts: ProblemConstants, variant: Variant,
                recovery: Recovery, eps: float,
                r_d: float | None = None) -> Certificate:
    """Assemble the certificate, defaulting ``R_d`` to the standing value.

    Last-iterate certificates require a compact box; with an unbounded box
    this raises :class:`CertificateUnavailableError`.  The projection bound
    alone degrades to "unavailable" only if the box is unbounded (which the
    last-iterate path already rejects), so for average recovery on an
    unbounded box the outer bound is still produced.
    """
    r_d_used = consts.R_d_default if r_d is None else float(r_d)
    delta = delta_rule(variant, recovery, eps, consts, r_d_used)
    a = (alpha(consts, max(r_d_used, _R_D_FLOOR), variant.p_theta)
         if recovery is Recovery.LAST else None)
    outer = outer_bound(variant, recovery, eps, consts, r_d_used)
    try:
        total = total_projection_bound(variant, recovery, eps, consts,
                                       r_d_used, consts.R_p)
    except CertificateUnavailableError:
        total = None
    return Certificate(variant=variant, recovery=recovery, eps=eps,
                       delta=delta, alpha=a, outer_bound=outer,
                       total_projection_bound=total, R_d_used=r_d_used,
                       R_p_used=consts.R_p)
