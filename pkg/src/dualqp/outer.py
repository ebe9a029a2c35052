"""Outer dual loop: inexact dual (fast) gradient method with primal recovery.

One template covers both variants.  At iteration k the loop solves the inner
problem at the current dual point ``y^k`` to gap ``delta``, forms the inexact
dual gradient ``gt = G u^k + g``, and updates

    x^k     = [y^k + gt / (2 L_d)]_+
    y^{k+1} = (1 - theta_k) x^k
              + theta_k [y^0 + (1/(2 L_d)) sum_j (j+1)/2 * gt^j]_+

with ``theta_k = 0`` (IDGM, so ``y^{k+1} = x^k``) or ``theta_k = 2/(k+3)``
(IDFGM).  Primal recovery reports either the last inner solution or a
running (weighted) average of inner solutions; for IDGM last-iterate
recovery the final dual point is recomputed from the dual average
(:func:`idgm_finalize`) before the primal point is extracted.

The iteration itself runs inside a compiled, resumable kernel (the module's
step functions are the plain-Python reference of the same updates); one
kernel call advances up to a chunk of iterations and records the trace, so
interpreter overhead stays out of the hot path.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numba import njit

from . import certify, linalg, problem
from .errors import CertificateUnavailableError, DataValidationError, InnerSolveError
from .inner import InnerConfig, _accelerated_kernel, inner_iteration_bound, solve_inner
from .linalg import COUNTER
from .variants import Recovery, Variant

#: Iterations advanced per kernel call; bounds trace preallocation.
CHUNK = 65536


def theta(k: int, variant: Variant) -> float:
    """Extrapolation weight: 0 for IDGM, 2/(k+3) for IDFGM."""
    if k < 0:
        raise DataValidationError("iteration index must be nonnegative")
    if variant is Variant.IDGM:
        return 0.0
    return 2.0 / (k + 3.0)


@dataclass
class OuterState:
    """Mutable loop state shared by the step functions below.

    ``x``/``y`` are the current dual iterates, ``z_sum`` the running weighted
    gradient sum anchoring the fast variant's extrapolation, ``x_hat_sum``
    the running dual sum for IDGM's final-point redefinition, ``u_hat`` the
    running primal average, and ``weight_sum`` its total averaging weight
    (k+1 for IDGM, (k+1)(k+2)/2 for IDFGM after k+1 iterations).
    """

    k: int
    x: np.ndarray
    y: np.ndarray
    y0: np.ndarray
    z_sum: np.ndarray
    x_hat_sum: np.ndarray
    u_hat: np.ndarray | None
    u_last: np.ndarray | None
    weight_sum: float


def make_state(p: int, y0: np.ndarray | None = None) -> OuterState:
    if y0 is None:
        y0 = np.zeros(p)
    else:
        y0 = linalg.as_vector(y0, "dual start y0")
        if y0.shape[0] != p:
            raise DataValidationError(
                f"dual start has {y0.shape[0]} entries, expected {p}")
        if p and np.any(y0 < 0.0):
            raise DataValidationError("dual start must be nonnegative")
    return OuterState(k=0, x=np.zeros(p), y=y0.copy(), y0=y0.copy(),
                      z_sum=np.zeros(p), x_hat_sum=np.zeros(p),
                      u_hat=None, u_last=None, weight_sum=0.0)


def dual_gradient_step(state: OuterState, grad: np.ndarray,
                       L_d: float) -> np.ndarray:
    """Projected ascent step ``[y + grad/(2 L_d)]_+``."""
    return linalg.nonneg_project(state.y + grad / (2.0 * L_d))


def fast_extrapolation_step(state: OuterState, grad: np.ndarray, L_d: float,
                            k: int) -> np.ndarray:
    """Fast-variant extrapolation; ``state.z_sum`` must already include the
    term ``(k+1)/2 * grad``."""
    anchor = linalg.nonneg_project(state.y0 + state.z_sum / (2.0 * L_d))
    th = theta(k, Variant.IDFGM)
    return (1.0 - th) * state.x + th * anchor


def primal_average_update(state: OuterState, u_k: np.ndarray, k: int,
                          variant: Variant) -> np.ndarray:
    """Push ``u^k`` into the running average without storing history.

    IDGM averages uniformly; IDFGM uses weights proportional to (j+1).
    Both recurrences reduce to ``u_hat = u^0`` at k = 0.
    """
    prev = state.u_hat if state.u_hat is not None else np.zeros_like(u_k)
    if variant is Variant.IDGM:
        u_hat = (k * prev + u_k) / (k + 1.0)
        state.weight_sum = float(k + 1)
    else:
        u_hat = (k * prev + 2.0 * u_k) / (k + 2.0)
        state.weight_sum += float(k + 1)
    state.u_hat = u_hat
    return u_hat


def idgm_finalize(nqp: problem.NormalizedQp, consts: problem.ProblemConstants,
                  state: OuterState, inner_cfg: InnerConfig
                  ) -> tuple[np.ndarray, np.ndarray, int]:
    """Redefine the IDGM final dual point from the dual average.

    Computes ``xh = x_hat_sum / k``, takes one projected gradient step from
    ``xh`` using a fresh inner solution there, and returns
    ``(x_final, u_tilde(x_final), extra_inner_iterations)``.
    """
    if state.k < 1:
        raise DataValidationError("finalization requires at least one iteration")
    xh = state.x_hat_sum / state.k
    warm = state.u_last if state.u_last is not None else np.zeros(nqp.n)
    r1 = solve_inner(nqp, consts, xh, warm, inner_cfg)
    gt = problem.dual_inexact_grad(nqp, r1.u_tilde)
    x_final = linalg.nonneg_project(xh + gt / (2.0 * consts.L_d))
    r2 = solve_inner(nqp, consts, x_final, r1.u_tilde, inner_cfg)
    return x_final, r2.u_tilde, r1.iterations_used + r2.iterations_used


class SolveStatus(Enum):
    CONVERGED = "Converged"
    MAX_ITERATIONS = "MaxIterations"
    CERTIFICATE_HORIZON = "CertificateHorizonReached"


@dataclass
class Trace:
    """Per-outer-iteration records (CSV schema: k,f,infeas,dtilde,inner_iters)."""

    k: list = field(default_factory=list)
    f: list = field(default_factory=list)
    infeas: list = field(default_factory=list)
    dtilde: list = field(default_factory=list)
    inner_iters: list = field(default_factory=list)

    def append(self, k, f, infeas, dtilde, inner_iters):
        self.k.append(int(k))
        self.f.append(float(f))
        self.infeas.append(float(infeas))
        self.dtilde.append(float(dtilde))
        self.inner_iters.append(int(inner_iters))

    def extend_from_arrays(self, k0, f, infeas, dtilde, inner_iters):
        count = len(f)
        self.k.extend(range(k0, k0 + count))
        self.f.extend(float(v) for v in f)
        self.infeas.extend(float(v) for v in infeas)
        self.dtilde.extend(float(v) for v in dtilde)
        self.inner_iters.extend(int(v) for v in inner_iters)

    def __len__(self):
        return len(self.k)


@dataclass(frozen=True)
class PerfReport:
    """Wall time of a solve and the share spent in matrix-vector products.

    Python-level products are timed directly; products inside compiled
    kernels are attributed as (count x per-call cost), with the per-call
    cost measured on the same operands by a timed calibration loop run
    before the solve clock starts.  The attribution is capped by the
    kernels' measured wall time, so the fraction never overstates.
    """

    wall_seconds: float
    matvec_seconds: float
    matvec_calls: int

    @property
    def matvec_fraction(self) -> float:
        if self.wall_seconds <= 0.0:
            return 0.0
        return min(1.0, self.matvec_seconds / self.wall_seconds)


@dataclass
class SolveConfig:
    """Knobs for one outer solve.

    ``delta`` defaults to the certificate rule for (variant, recovery, eps);
    ``f_ref`` enables the known-optimum stopping rule (|f - f_ref| <= eps and
    infeasibility <= eps), otherwise a duality-gap stop with the same eps is
    used when ``practical_stop`` is on.  The certificate's outer-iteration
    bound caps the loop unless disabled.  ``inner_certified_stop`` toggles
    the inner solver's early exit: on (default), each inner solve stops at
    the first iterate whose gradient-mapping bound certifies the gap; off,
    each runs the full a-priori iteration count, which effectively delivers
    exact inner solutions under warm starts (useful when the recovered point
    must be resolved below the O(sqrt(delta)) value noise of certified
    stops).  ``record_dual_history`` keeps the per-iteration dual points
    (and, for IDGM, the running dual averages) for diagnostics at the cost
    of one kernel call per iteration.
    """

    variant: Variant = Variant.IDFGM
    recovery: Recovery = Recovery.AVERAGE
    eps: float = 1e-2
    delta: float | None = None
    max_outer: int = 100_000
    max_inner: int = 200_000
    f_ref: float | None = None
    practical_stop: bool = True
    r_d: float | None = None
    y0: np.ndarray | None = None
    warm_primal: np.ndarray | None = None
    use_certificate_horizon: bool = True
    inner_certified_stop: bool = True
    record_dual_history: bool = False

    def __post_init__(self):
        if not (self.eps > 0.0):
            raise DataValidationError("eps must be positive")
        if self.delta is not None and not (self.delta > 0.0):
            raise DataValidationError("delta must be positive when given")
        if self.max_outer < 1:
            raise DataValidationError("max_outer must be at least 1")


@dataclass
class SolveResult:
    u_out: np.ndarray
    x_out: np.ndarray
    status: SolveStatus
    f: float
    infeas: float
    outer_iterations: int
    total_inner_iterations: int
    delta_used: float
    trace: Trace
    perf: PerfReport
    x_history: list | None = None
    y_history: list | None = None
    xhat_history: list | None = None


@njit(cache=True)
def _outer_chunk(Q, q, lb, ub, G, GT, g,
                 L_d, l_f, cert_coef, kappa, delta, inner_cap,
                 inner_has_apriori, inner_certified, is_fast, rec_last,
                 eps, f_ref, has_f_ref, practical, k_min_stop,
                 k_start, chunk_len,
                 x, y, y0, z_sum, x_hat_sum, u_hat, warm,
                 tr_f, tr_infeas, tr_dtilde, tr_inner
                 ):  # pragma: no cover - jitted
    """Advance up to ``chunk_len`` outer iterations in place.

    Returns (iterations_done, converged, inner_failed, total_inner,
    q_products, g_products, gt_products).  State arrays are mutated so the
    caller can resume from where the chunk stopped; stop checks are
    suppressed below ``k_min_stop`` (the caller bumps it after a stop
    candidate fails verification on the recovered point).
    """
    n = q.shape[0]
    p = g.shape[0]
    inv_lf = 1.0 / l_f
    half_step = 1.0 / (2.0 * L_d)
    total_inner = 0
    nmv_q = 0
    nmv_g = 0
    nmv_gt = 0
    done = 0
    converged = False
    failed = False
    for idx in range(chunk_len):
        k = k_start + idx
        if p > 0:
            c = q + np.dot(GT, y)
            nmv_gt += 1
        else:
            c = q.copy()
        u_k, t_used, bound, nmv = _accelerated_kernel(
            Q, c, lb, ub, inv_lf, cert_coef, kappa, delta, inner_cap,
            inner_certified, warm)
        nmv_q += nmv
        total_inner += t_used
        if (inner_certified and bound > delta
                and not (inner_has_apriori and t_used >= inner_cap)):
            failed = True
            done = idx
            break
        for i in range(n):
            warm[i] = u_k[i]

        qu = np.dot(Q, u_k)
        nmv_q += 1
        f_uk = 0.0
        for i in range(n):
            f_uk += (0.5 * qu[i] + q[i]) * u_k[i]

        dtilde = f_uk
        if p > 0:
            gt = np.dot(G, u_k)
            nmv_g += 1
            for j in range(p):
                gt[j] += g[j]
                dtilde += y[j] * gt[j]
        else:
            gt = np.zeros(0)

        # Step 2: projected dual ascent.
        for j in range(p):
            xv = y[j] + gt[j] * half_step
            x[j] = xv if xv > 0.0 else 0.0

        # Step 3: next dual point (y is free to overwrite from here on).
        if is_fast:
            wgt = 0.5 * (k + 1)
            th = 2.0 / (k + 3.0)
            for j in range(p):
                z_sum[j] += wgt * gt[j]
                anc = y0[j] + z_sum[j] * half_step
                if anc < 0.0:
                    anc = 0.0
                y[j] = (1.0 - th) * x[j] + th * anc
        else:
            for j in range(p):
                x_hat_sum[j] += x[j]
                y[j] = x[j]

        # Running primal average, clipped to keep the box invariant exact.
        if is_fast:
            denom = 1.0 / (k + 2.0)
            for i in range(n):
                uh = (k * u_hat[i] + 2.0 * u_k[i]) * denom
                if uh < lb[i]:
                    uh = lb[i]
                elif uh > ub[i]:
                    uh = ub[i]
                u_hat[i] = uh
        else:
            denom = 1.0 / (k + 1.0)
            for i in range(n):
                uh = (k * u_hat[i] + u_k[i]) * denom
                if uh < lb[i]:
                    uh = lb[i]
                elif uh > ub[i]:
                    uh = ub[i]
                u_hat[i] = uh

        if rec_last:
            f_rep = f_uk
            sq = 0.0
            for j in range(p):
                v = gt[j]
                if v > 0.0:
                    sq += v * v
            infeas_rep = math.sqrt(sq)
        else:
            qh = np.dot(Q, u_hat)
            nmv_q += 1
            f_rep = 0.0
            for i in range(n):
                f_rep += (0.5 * qh[i] + q[i]) * u_hat[i]
            sq = 0.0
            if p > 0:
                gh = np.dot(G, u_hat)
                nmv_g += 1
                for j in range(p):
                    v = gh[j] + g[j]
                    if v > 0.0:
                        sq += v * v
            infeas_rep = math.sqrt(sq)

        tr_f[idx] = f_rep
        tr_infeas[idx] = infeas_rep
        tr_dtilde[idx] = dtilde
        tr_inner[idx] = t_used
        done = idx + 1

        if k >= k_min_stop:
            if has_f_ref:
                if abs(f_rep - f_ref) <= eps and infeas_rep <= eps:
                    converged = True
                    break
            elif practical:
                if (f_rep - dtilde) <= eps and infeas_rep <= eps:
                    converged = True
                    break
    return done, converged, failed, total_inner, nmv_q, nmv_g, nmv_gt


# Prepared contiguous transposes and calibrated per-product costs for
# recently seen (Q, G) pairs, matched by object identity (the entries hold
# strong references, so a hit can never be a recycled allocation).  Repeat
# solves on the same arrays (benchmark sweeps, MPC steps) skip the
# recalibration.
_PREP_CACHE: list = []


def _prepared(nqp: problem.NormalizedQp):
    for entry in _PREP_CACHE:
        if entry[0] is nqp.Q and entry[1] is nqp.G:
            return entry[2:]
    GT = np.ascontiguousarray(nqp.G.T)
    unit_q = linalg.calibrate_matvec_seconds(nqp.Q, reps=200, rounds=2)
    if nqp.p:
        unit_g = linalg.calibrate_matvec_seconds(nqp.G, reps=200, rounds=2)
        unit_gt = linalg.calibrate_matvec_seconds(GT, reps=200, rounds=2)
    else:
        unit_g = unit_gt = 0.0
    if len(_PREP_CACHE) >= 8:
        _PREP_CACHE.pop(0)
    _PREP_CACHE.append((nqp.Q, nqp.G, GT, unit_q, unit_g, unit_gt))
    return GT, unit_q, unit_g, unit_gt


def solve(nqp: problem.NormalizedQp, consts: problem.ProblemConstants,
          cfg: SolveConfig) -> SolveResult:
    """Run the outer loop and recover a primal point per ``cfg.recovery``."""
    p, n = nqp.p, nqp.n

    delta = cfg.delta
    horizon = None
    cert = None
    if delta is None or cfg.use_certificate_horizon:
        try:
            cert = certify.certificate(nqp, consts, cfg.variant, cfg.recovery,
                                       cfg.eps, cfg.r_d)
        except CertificateUnavailableError:
            cert = None
    if delta is None:
        if cert is None:
            raise DataValidationError(
                "no accuracy certificate is available for this run (unbounded "
                "box with last-iterate recovery); pass delta explicitly")
        delta = cert.delta
    if cfg.use_certificate_horizon and cert is not None:
        horizon = cert.outer_bound
    cap = cfg.max_outer if horizon is None else min(cfg.max_outer, horizon)

    inner_has_apriori = math.isfinite(consts.R_p)
    if inner_has_apriori:
        inner_cap = min(inner_iteration_bound(delta, consts.R_p, consts.L_f,
                                              consts.sigma_f),
                        cfg.max_inner)
    else:
        inner_cap = cfg.max_inner
    kappa = ((math.sqrt(consts.L_f) - math.sqrt(consts.sigma_f))
             / (math.sqrt(consts.L_f) + math.sqrt(consts.sigma_f)))
    cert_coef = consts.L_f ** 2 / (2.0 * consts.sigma_f)
    inner_cfg = InnerConfig(delta=delta, max_iterations=cfg.max_inner,
                            use_certified_stop=cfg.inner_certified_stop)

    state = make_state(p, cfg.y0)
    warm = np.zeros(n) if cfg.warm_primal is None else np.asarray(
        cfg.warm_primal, dtype=np.float64)
    warm = np.ascontiguousarray(linalg.box_project(warm, nqp.box))
    u_hat = np.zeros(n)

    GT, unit_q, unit_g, unit_gt = _prepared(nqp)

    t_start = time.perf_counter()
    calls0, secs0 = COUNTER.snapshot()

    trace = Trace()
    record = cfg.record_dual_history
    x_hist = [] if record else None
    y_hist = [] if record else None
    xhat_hist = [] if (record and cfg.variant is Variant.IDGM) else None

    total_inner = 0
    nmv_q = nmv_g = nmv_gt = 0
    kernel_wall = 0.0
    converged = False
    k_done = 0
    k_min_stop = 0
    is_fast = cfg.variant is Variant.IDFGM
    rec_last = cfg.recovery is Recovery.LAST
    has_f_ref = cfg.f_ref is not None
    f_ref = cfg.f_ref if has_f_ref else 0.0
    final = None  # verified (x_out, u_out, f, infeas) for last-iterate runs

    def _recover_last():
        # Extract the last-iterate point the solve would report right now,
        # together with the quantities the stopping rule needs.
        nonlocal total_inner
        state.k = k_done
        state.u_last = warm
        if cfg.variant is Variant.IDGM:
            x_f, u_f, extra = idgm_finalize(nqp, consts, state, inner_cfg)
        else:
            res_f = solve_inner(nqp, consts, state.x, warm, inner_cfg)
            x_f, u_f, extra = state.x.copy(), res_f.u_tilde, res_f.iterations_used
        total_inner += extra
        f_f = problem.objective(nqp, u_f)
        gv = problem.constraint_value(nqp, u_f)
        infeas_f = float(np.linalg.norm(linalg.nonneg_project(gv)))
        dtilde_f = f_f + (float(x_f @ gv) if p else 0.0)
        return x_f, u_f, f_f, infeas_f, dtilde_f

    while k_done < cap and not converged:
        chunk_len = 1 if record else min(CHUNK, cap - k_done)
        if record:
            y_hist.append(state.y.copy())
        tr_f = np.empty(chunk_len)
        tr_infeas = np.empty(chunk_len)
        tr_dtilde = np.empty(chunk_len)
        tr_inner = np.empty(chunk_len, dtype=np.int64)
        t_k = time.perf_counter()
        done, conv, failed, chunk_inner, dq, dg, dgt = _outer_chunk(
            nqp.Q, nqp.q, nqp.box.lb, nqp.box.ub, nqp.G, GT, nqp.g,
            consts.L_d, consts.L_f, cert_coef, kappa, delta, inner_cap,
            inner_has_apriori, cfg.inner_certified_stop, is_fast, rec_last,
            cfg.eps, f_ref, has_f_ref, cfg.practical_stop, k_min_stop,
            k_done, chunk_len,
            state.x, state.y, state.y0, state.z_sum, state.x_hat_sum,
            u_hat, warm,
            tr_f, tr_infeas, tr_dtilde, tr_inner)
        kernel_wall += time.perf_counter() - t_k
        total_inner += chunk_inner
        nmv_q += dq
        nmv_g += dg
        nmv_gt += dgt
        if failed:
            raise InnerSolveError(
                f"outer iteration {k_done + done}: inner solver exhausted "
                f"{cfg.max_inner} iterations without certifying gap "
                f"{delta:.3e}; the box is unbounded so no a-priori iteration "
                f"count applies")
        if done:
            trace.extend_from_arrays(k_done, tr_f[:done], tr_infeas[:done],
                                     tr_dtilde[:done], tr_inner[:done])
            if record:
                x_hist.append(state.x.copy())
                if xhat_hist is not None:
                    xhat_hist.append(state.x_hat_sum / (k_done + done))
        k_done += done
        if conv and rec_last and not has_f_ref:
            # The running iterate met the duality-gap rule, but last-iterate
            # recovery reports a different point; since this stop is the
            # solver's own eps claim, accept only if the recovered point
            # meets the rule too, otherwise resume with the re-check
            # suppressed for a while (the recovered point improves as the
            # dual sequence settles).  Known-optimum (f_ref) runs keep the
            # per-iteration semantics of the trace and stop immediately.
            x_f, u_f, f_f, infeas_f, dtilde_f = _recover_last()
            if (f_f - dtilde_f) <= cfg.eps and infeas_f <= cfg.eps:
                final = (x_f, u_f, f_f, infeas_f)
                converged = True
            else:
                k_min_stop = k_done + max(5, k_done // 4)
        else:
            converged = conv

    attributed = nmv_q * unit_q + nmv_g * unit_g + nmv_gt * unit_gt
    COUNTER.add(nmv_q + nmv_g + nmv_gt, min(attributed, kernel_wall))

    state.k = k_done
    state.u_last = warm
    state.u_hat = u_hat if k_done else None

    if converged:
        status = SolveStatus.CONVERGED
    elif horizon is not None and k_done >= horizon and horizon <= cfg.max_outer:
        status = SolveStatus.CERTIFICATE_HORIZON
    else:
        status = SolveStatus.MAX_ITERATIONS

    if rec_last:
        if final is None:
            x_f, u_f, f_f, infeas_f, _ = _recover_last()
            final = (x_f, u_f, f_f, infeas_f)
        x_out, u_out, f_out, infeas_out = final
    else:
        x_out = state.x.copy()
        u_out = u_hat if k_done else warm
        f_out = problem.objective(nqp, u_out)
        infeas_out = problem.infeasibility(nqp, u_out)

    wall = time.perf_counter() - t_start
    calls1, secs1 = COUNTER.snapshot()
    perf = PerfReport(wall_seconds=wall, matvec_seconds=secs1 - secs0,
                      matvec_calls=calls1 - calls0)

    return SolveResult(
        u_out=u_out, x_out=x_out, status=status, f=f_out, infeas=infeas_out,
        outer_iterations=k_done, total_inner_iterations=total_inner,
        delta_used=delta, trace=trace, perf=perf,
        x_history=x_hist, y_history=y_hist, xhat_history=xhat_hist,
    )


def write_trace_csv(trace: Trace, path):
    """Write the per-iteration trace; floats use round-trip repr."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("k,f,infeas,dtilde,inner_iters\n")
        for i in range(len(trace)):
            fh.write(f"{trace.k[i]},{trace.f[i]!r},{trace.infeas[i]!r},"
                     f"{trace.dtilde[i]!r},{trace.inner_iters[i]}\n")
