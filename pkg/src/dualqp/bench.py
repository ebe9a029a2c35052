"""Random QP generation, an exact small-scale oracle, and experiment runners.

The generator is deterministic in its seed (numpy's PCG64 ``default_rng``;
the draw order is fixed: cost factor M, linear term q, constraint matrix G,
Slater slacks s) and always produces a strictly feasible box center.

Two ways to obtain the true optimum:

* :func:`oracle_solve` - brute-force enumeration of active sets with a KKT
  linear solve per candidate.  Independent of the iterative solver; limited
  to small instances.
* :func:`reference_solve` - a high-accuracy fast-gradient run followed by an
  active-set KKT polish.  The polished point is only accepted after passing
  the same KKT residual / sign / feasibility checks the oracle uses, so its
  accuracy does not rest on the iterative run.  Not independent of the
  solver code path; use the oracle where it is tractable.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from . import outer, problem
from .errors import DataValidationError, OracleError
from .linalg import Box
from .problem import NormalizedQp, QpProblem
from .variants import Recovery, Variant

KKT_TOL = 1e-9
ENUMERATION_BUDGET = 10_000_000


@dataclass(frozen=True)
class RandomQpConfig:
    """Shape, seed, and conditioning of one random instance."""

    n: int
    p: int
    seed: int
    cond: float = 10.0
    box_halfwidth: float = 10.0

    def __post_init__(self):
        if self.n < 1 or self.p < 0:
            raise DataValidationError("dimensions must satisfy n >= 1, p >= 0")
        if self.cond < 1.0:
            raise DataValidationError("target condition number must be >= 1")
        if not (self.box_halfwidth > 0.0):
            raise DataValidationError("box halfwidth must be positive")


def random_qp(cfg: RandomQpConfig) -> QpProblem:
    """Draw a strictly feasible random QP, deterministic in the seed.

    ``Q = M'M + mu I`` with mu chosen so the condition number equals
    ``cfg.cond`` (capped below at the raw Wishart conditioning); q and G are
    standard normal; the box center u0 = 0 gets slack at least 0.1 in every
    row, so a Slater point exists by construction.
    """
    rng = np.random.default_rng(cfg.seed)
    n, p = cfg.n, cfg.p
    M = rng.standard_normal((n, n))
    q = rng.standard_normal(n)
    G = rng.standard_normal((p, n))
    s = rng.uniform(0.1, 1.0, p)

    S = M.T @ M
    if cfg.cond == 1.0:
        Q = np.eye(n)
    else:
        w = np.linalg.eigvalsh(0.5 * (S + S.T))
        lam_min, lam_max = float(w[0]), float(w[-1])
        mu = max(0.0, (lam_max - cfg.cond * lam_min) / (cfg.cond - 1.0))
        Q = S + mu * np.eye(n)
    Q = 0.5 * (Q + Q.T)

    hw = cfg.box_halfwidth
    box = Box(-hw * np.ones(n), hw * np.ones(n))
    return QpProblem(Q=Q, q=q, box=box, Gbar=G, gbar=-s,
                     clb=np.full(p, -math.inf), cub=np.zeros(p))


@dataclass(frozen=True)
class OracleSolution:
    """KKT-verified optimum: primal point, value, inequality multipliers."""

    u_star: np.ndarray
    f_star: float
    x_star: np.ndarray
    active_set: tuple
    kkt_residual: float


def _kkt_candidate(nqp: NormalizedQp, fixed: dict, active_rows: tuple):
    """Solve the equality-constrained QP for one active-set guess.

    ``fixed`` maps coordinate index -> bound value; ``active_rows`` lists the
    constraint rows held at equality.  Returns (u, row_mults, coord_mults) or
    None if the KKT system is singular.
    """
    n = nqp.n
    na, nf = len(active_rows), len(fixed)
    dim = n + na + nf
    K = np.zeros((dim, dim))
    rhs = np.zeros(dim)
    K[:n, :n] = nqp.Q
    rhs[:n] = -nqp.q
    for j, i in enumerate(active_rows):
        K[:n, n + j] = nqp.G[i]
        K[n + j, :n] = nqp.G[i]
        rhs[n + j] = -nqp.g[i]
    for j, (i, val) in enumerate(fixed.items()):
        K[i, n + na + j] = 1.0
        K[n + na + j, i] = 1.0
        rhs[n + na + j] = val
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return None
    u = sol[:n]
    lam = sol[n:n + na]
    nu = sol[n + na:]
    return u, lam, nu


def _validate_candidate(nqp: NormalizedQp, fixed: dict, active_rows: tuple,
                        u, lam, nu, tol: float):
    box = nqp.box
    if np.any(u < box.lb - tol) or np.any(u > box.ub + tol):
        return False
    if nqp.p:
        gv = nqp.G @ u + nqp.g
        inactive = np.ones(nqp.p, dtype=bool)
        inactive[list(active_rows)] = False
        if np.any(gv[inactive] > tol):
            return False
    if np.any(lam < -tol):
        return False
    # Coordinate multipliers: >= 0 at the upper bound, <= 0 at the lower.
    for j, (i, val) in enumerate(fixed.items()):
        at_upper = val == box.ub[i]
        at_lower = val == box.lb[i]
        if at_upper and not at_lower and nu[j] < -tol:
            return False
        if at_lower and not at_upper and nu[j] > tol:
            return False
    return True


def oracle_solve(nqp: NormalizedQp, tol: float = KKT_TOL) -> OracleSolution:
    """Exact optimum by enumerating active sets, small instances only.

    Every combination of box faces (each coordinate free / at a finite lower
    or upper bound) and active constraint rows is tried in order of
    increasing activity, and the first candidate passing primal feasibility
    and multiplier sign checks is returned (the optimum is unique, so any
    valid candidate is it).
    """
    n, p = nqp.n, nqp.p
    box = nqp.box
    if n > 12 or p > 23:
        raise OracleError(
            f"instance too large for enumeration (n={n}, p={p}); use the "
            f"high-accuracy reference mode"
        )
    states_per_coord = [
        1 + int(math.isfinite(box.lb[i])) + int(math.isfinite(box.ub[i]))
        for i in range(n)
    ]
    total = (2 ** p) * int(np.prod(states_per_coord))
    if total > ENUMERATION_BUDGET:
        raise OracleError(
            f"instance too large for enumeration ({total:.2e} candidates, "
            f"n={n}); use the high-accuracy reference mode"
        )

    row_subsets = sorted(
        itertools.chain.from_iterable(
            itertools.combinations(range(p), r) for r in range(p + 1)),
        key=len,
    )

    def box_choices(size):
        # All ways to pin `size` coordinates at one of their finite bounds.
        for coords in itertools.combinations(range(n), size):
            options = []
            for i in coords:
                opts = []
                if math.isfinite(box.lb[i]):
                    opts.append((i, float(box.lb[i])))
                if math.isfinite(box.ub[i]) and box.ub[i] != box.lb[i]:
                    opts.append((i, float(box.ub[i])))
                if not opts:
                    break
                options.append(opts)
            else:
                yield from itertools.product(*options)

    for n_fixed in range(n + 1):
        for pins in box_choices(n_fixed):
            fixed = dict(pins)
            for rows in row_subsets:
                cand = _kkt_candidate(nqp, fixed, rows)
                if cand is None:
                    continue
                u, lam, nu = cand
                if not _validate_candidate(nqp, fixed, rows, u, lam, nu, tol):
                    continue
                return _package_solution(nqp, fixed, rows, u, lam, nu)
    raise OracleError("no active-set candidate satisfied the KKT conditions")


def _package_solution(nqp: NormalizedQp, fixed: dict, rows: tuple,
                      u, lam, nu) -> OracleSolution:
    x_star = np.zeros(nqp.p)
    for j, i in enumerate(rows):
        x_star[i] = max(0.0, float(lam[j]))
    grad = nqp.Q @ u + nqp.q
    if nqp.p:
        grad = grad + nqp.G.T @ x_star
    for j, (i, _val) in enumerate(fixed.items()):
        grad[i] += nu[j]
    residual = float(np.linalg.norm(grad))
    f_star = 0.5 * float(u @ (nqp.Q @ u)) + float(nqp.q @ u)
    return OracleSolution(u_star=u, f_star=f_star, x_star=x_star,
                          active_set=tuple(sorted(rows)),
                          kkt_residual=residual)


def _polish(nqp: NormalizedQp, u, x, tol: float):
    """Try KKT polish from an approximate primal/dual pair.

    Guesses the active set at several detection thresholds, solves the
    equality-constrained KKT system, and returns the first candidate that
    passes the oracle's validation checks.
    """
    box = nqp.box
    gv = (nqp.G @ u + nqp.g) if nqp.p else np.zeros(0)
    xmax = float(np.max(x)) if nqp.p else 0.0
    for tau in (1e-7, 1e-6, 1e-5, 1e-8, 1e-4, 1e-3):
        rows = tuple(i for i in range(nqp.p)
                     if gv[i] > -tau or x[i] > tau * max(1.0, xmax))
        fixed = {}
        ok = True
        for i in range(nqp.n):
            near_lb = math.isfinite(box.lb[i]) and u[i] - box.lb[i] < tau
            near_ub = math.isfinite(box.ub[i]) and box.ub[i] - u[i] < tau
            if near_lb and near_ub:
                ok = False
                break
            if near_lb:
                fixed[i] = float(box.lb[i])
            elif near_ub:
                fixed[i] = float(box.ub[i])
        if not ok:
            continue
        cand = _kkt_candidate(nqp, fixed, rows)
        if cand is None:
            continue
        uc, lam, nu = cand
        if _validate_candidate(nqp, fixed, rows, uc, lam, nu, tol):
            return _package_solution(nqp, fixed, rows, uc, lam, nu)
    return None


def reference_solve(nqp: NormalizedQp,
                    consts: problem.ProblemConstants | None = None,
                    tol: float = KKT_TOL) -> OracleSolution:
    """High-accuracy optimum for instances beyond the enumeration budget.

    Runs the fast-gradient variant to a tight duality gap, then polishes the
    identified active set through an exact KKT solve.  Raises
    :class:`OracleError` if no polish candidate validates even after a
    tighter rerun.
    """
    if consts is None:
        consts = problem.constants(nqp)
    for gap_tol, delta, cap in ((1e-7, 1e-10, 50_000),
                                (1e-9, 1e-12, 200_000)):
        cfg = outer.SolveConfig(
            variant=Variant.IDFGM, recovery=Recovery.LAST, eps=gap_tol,
            delta=delta, max_outer=cap, practical_stop=True,
            use_certificate_horizon=False,
        )
        res = outer.solve(nqp, consts, cfg)
        sol = _polish(nqp, res.u_out, res.x_out, tol)
        if sol is not None:
            return sol
    raise OracleError(
        "reference mode failed: no KKT-validated active set found after the "
        "high-accuracy rerun"
    )


def solve_exact(nqp: NormalizedQp,
                consts: problem.ProblemConstants | None = None
                ) -> OracleSolution:
    """Oracle when tractable, reference polish otherwise."""
    try:
        return oracle_solve(nqp)
    except OracleError:
        return reference_solve(nqp, consts)


# --- experiment runners -----------------------------------------------------


def run_sensitivity(cfg: RandomQpConfig, eps: float, delta_list,
                    max_outer: int = 3000, out_path=None) -> list[dict]:
    """Suboptimality/infeasibility traces versus the inner accuracy.

    For each delta, both variants run with average recovery against the
    instance's exact optimum; rows are
    ``(variant, delta, k, |f(u_hat_k) - f*|, ||[G u_hat_k + g]_+||)``.
    """
    qp = random_qp(cfg)
    nqp = problem.normalize(qp)
    consts = problem.constants(nqp)
    exact = solve_exact(nqp, consts)
    rows = []
    for delta in delta_list:
        for variant in (Variant.IDGM, Variant.IDFGM):
            run_cfg = outer.SolveConfig(
                variant=variant, recovery=Recovery.AVERAGE, eps=eps,
                delta=float(delta), max_outer=max_outer,
                f_ref=exact.f_star, use_certificate_horizon=False,
            )
            res = outer.solve(nqp, consts, run_cfg)
            for i in range(len(res.trace)):
                rows.append({
                    "variant": variant.value,
                    "delta": float(delta),
                    "k": res.trace.k[i],
                    "subopt": abs(res.trace.f[i] - exact.f_star),
                    "infeas": res.trace.infeas[i],
                })
    if out_path is not None:
        write_sensitivity_csv(rows, out_path)
    return rows


def write_sensitivity_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("variant,delta,k,subopt,infeas\n")
        for r in rows:
            fh.write(f"{r['variant']},{r['delta']!r},{r['k']},"
                     f"{r['subopt']!r},{r['infeas']!r}\n")


def _scaling_cell(n: int, p: int, seed: int, eps: float,
                  cond: float, box_halfwidth: float) -> list[dict]:
    cfg = RandomQpConfig(n=n, p=p, seed=seed, cond=cond,
                         box_halfwidth=box_halfwidth)
    qp = random_qp(cfg)
    nqp = problem.normalize(qp)
    consts = problem.constants(nqp)
    exact = solve_exact(nqp, consts)
    r_d = float(np.linalg.norm(exact.x_star))
    rows = []
    for variant in (Variant.IDGM, Variant.IDFGM):
        for recovery in (Recovery.LAST, Recovery.AVERAGE):
            run_cfg = outer.SolveConfig(
                variant=variant, recovery=recovery, eps=eps,
                f_ref=exact.f_star, max_outer=500_000,
                r_d=max(r_d, 1e-6), use_certificate_horizon=False,
            )
            t0 = time.perf_counter()
            res = outer.solve(nqp, consts, run_cfg)
            wall_ms = (time.perf_counter() - t0) * 1e3
            rows.append({
                "n": n, "p": p, "seed": seed,
                "variant": variant.value, "recovery": recovery.value,
                "outer_iters": res.outer_iterations,
                "total_inner_iters": res.total_inner_iterations,
                "wall_ms": wall_ms,
                "status": res.status.value,
            })
    return rows


def run_scaling(dims, trials: int, eps: float, out_path=None, jobs: int = 1,
                cond: float = 10.0, box_halfwidth: float = 10.0) -> list[dict]:
    """Outer-iteration counts across dimensions and seeds.

    For each n in ``dims`` the row count is ``p = ceil(1.5 n)`` and seeds run
    ``0..trials-1``; all four (variant, recovery) combinations are solved
    with the known-optimum stopping rule at accuracy ``eps``.  Cells are
    independent, so ``jobs > 1`` fans them out over processes; results are
    merged in deterministic (n, seed) order either way.
    """
    cells = [(int(n), int(math.ceil(1.5 * n)), seed)
             for n in dims for seed in range(trials)]
    if jobs > 1:
        import multiprocessing as mp
        with mp.get_context("spawn").Pool(jobs) as pool:
            chunks = pool.starmap(
                _scaling_cell,
                [(n, p, seed, eps, cond, box_halfwidth)
                 for (n, p, seed) in cells])
    else:
        chunks = [_scaling_cell(n, p, seed, eps, cond, box_halfwidth)
                  for (n, p, seed) in cells]
    rows = [row for chunk in chunks for row in chunk]
    if out_path is not None:
        write_scaling_csv(rows, out_path)
    return rows


def write_scaling_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("n,p,seed,variant,recovery,outer_iters,"
                 "total_inner_iters,wall_ms\n")
        for r in rows:
            fh.write(f"{r['n']},{r['p']},{r['seed']},{r['variant']},"
                     f"{r['recovery']},{r['outer_iters']},"
                     f"{r['total_inner_iters']},{r['wall_ms']!r}\n")
