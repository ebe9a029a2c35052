"""Condensed linear-MPC builder and closed-loop simulator.

The predicted states are eliminated, so the QP decision vector is the input
sequence over the horizon.  The condensed Hessian depends only on the model
and weights; a new measured state (and previous input, when an input-rate
penalty is active) changes only the linear term and the constraint offsets,
which is what makes the per-step rebuild cheap.

Includes the discretized self-balancing two-wheeled robot model used by the
closed-loop study (state order: horizontal position h, speed hdot, body
angle theta, angular velocity thetadot; scalar motor-voltage input).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg, outer, problem
from .errors import DataValidationError, DimensionError, DualQpError
from .linalg import Box
from .problem import QpProblem


@dataclass(frozen=True)
class LtiModel:
    """Discrete-time linear model ``x+ = A x + B u``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = linalg.as_matrix(self.A, "A")
        B = linalg.as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionError(
                f"B must have {A.shape[0]} rows, got {B.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.B.shape[1]


def balancing_robot_model() -> LtiModel:
    """Zero-order-hold discretization (8 ms sample) of the balancing robot."""
    A = np.array([
        [1.0, 0.0054, -2e-4, 1e-4],
        [0.0, 0.4717, -0.0465, 0.0211],
        [0.0, 0.03, 1.0049, 0.0068],
        [0.0, 6.0742, 1.0721, 0.7633],
    ])
    B = np.array([[0.0002], [0.0448], [-0.0025], [-0.5147]])
    return LtiModel(A=A, B=B)


@dataclass(frozen=True)
class MpcSpec:
    """Horizon, weights, and constraints of the condensed MPC problem.

    ``beta`` weights an input-rate penalty ``beta * (u_t - u_{t-1})^2``
    coupling the first move to the previously applied input.  State bounds
    are per-component with +-inf for unconstrained states; they are imposed
    on the predicted states x_1..x_N.  ``terminal_weight`` weights the
    horizon-end state; it defaults to the stage weight, but short horizons
    on marginally controllable plants usually need the Riccati weight
    (:func:`riccati_terminal_weight`) for a stable closed loop.
    """

    horizon: int
    Q_stage: np.ndarray
    R_stage: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    state_lb: np.ndarray
    state_ub: np.ndarray
    beta: float = 0.0
    terminal_weight: np.ndarray | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise DataValidationError("horizon must be at least 1")
        if self.beta < 0.0:
            raise DataValidationError("input-rate weight beta must be >= 0")
        Q = linalg.as_matrix(self.Q_stage, "Q_stage")
        R = linalg.as_matrix(self.R_stage, "R_stage")
        wq = np.linalg.eigvalsh(0.5 * (Q + Q.T))
        if wq[0] < -1e-12:
            raise DataValidationError("stage weight Q_stage must be PSD")
        wr = np.linalg.eigvalsh(0.5 * (R + R.T))
        if wr[0] <= 0.0:
            raise DataValidationError(
                "input weight R_stage must be positive definite (it makes "
                "the condensed Hessian positive definite)")
        object.__setattr__(self, "Q_stage", 0.5 * (Q + Q.T))
        object.__setattr__(self, "R_stage", 0.5 * (R + R.T))
        if self.terminal_weight is not None:
            P = linalg.as_matrix(self.terminal_weight, "terminal_weight")
            wp = np.linalg.eigvalsh(0.5 * (P + P.T))
            if wp[0] < -1e-12:
                raise DataValidationError("terminal weight must be PSD")
            object.__setattr__(self, "terminal_weight", 0.5 * (P + P.T))
        object.__setattr__(self, "u_min",
                           linalg.as_vector(self.u_min, "u_min",
                                            allow_infinite=True))
        object.__setattr__(self, "u_max",
                           linalg.as_vector(self.u_max, "u_max",
                                            allow_infinite=True))
        object.__setattr__(self, "state_lb",
                           linalg.as_vector(self.state_lb, "state_lb",
                                            allow_infinite=True))
        object.__setattr__(self, "state_ub",
                           linalg.as_vector(self.state_ub, "state_ub",
                                            allow_infinite=True))


@dataclass(frozen=True)
class CondensedQp:
    """State-independent condensed matrices plus the affine maps in x0/u_prev.

    f(U) = 0.5 U'HU + q(x0, u_prev)'U with
        q(x0, u_prev) = Kq x0 - beta * (u_prev padded to the first block)
    and the selected state-constraint rows satisfy
        state_lb <= Gbar U + Phi_sel x0 <= state_ub (tiled).
    """

    H: np.ndarray
    Kq: np.ndarray
    Gbar: np.ndarray
    Phi_sel: np.ndarray
    clb: np.ndarray
    cub: np.ndarray
    box: Box
    horizon: int
    nu: int
    nx: int
    beta: float

    def linear_term(self, x0, u_prev) -> np.ndarray:
        q = self.Kq @ np.asarray(x0, dtype=np.float64)
        if self.beta > 0.0:
            q[:self.nu] -= self.beta * np.asarray(u_prev, dtype=np.float64)
        return q

    def constraint_offset(self, x0) -> np.ndarray:
        return self.Phi_sel @ np.asarray(x0, dtype=np.float64)

    def to_problem(self, x0, u_prev) -> QpProblem:
        """Instantiate the QP for a measured state; H and Gbar are shared."""
        return QpProblem(Q=self.H, q=self.linear_term(x0, u_prev),
                         box=self.box, Gbar=self.Gbar,
                         gbar=self.constraint_offset(x0),
                         clb=self.clb, cub=self.cub)


def condense(model: LtiModel, spec: MpcSpec) -> CondensedQp:
    """Eliminate the predicted states from the N-step optimal control problem.

    With Gamma the block prediction map (x_1..x_N stacked against the input
    sequence) and Phi the free response, the condensed cost is
    0.5 U' H U + (Gamma' Qbar Phi x0)' U where
    H = Gamma' Qbar Gamma + Rbar + beta D'D and D is the first-difference
    operator over input blocks (its first row couples u_prev into the linear
    term instead).
    """
    N, nx, nu = spec.horizon, model.nx, model.nu
    if spec.Q_stage.shape != (nx, nx):
        raise DimensionError(f"Q_stage must be {nx}x{nx}")
    if spec.R_stage.shape != (nu, nu):
        raise DimensionError(f"R_stage must be {nu}x{nu}")
    if spec.u_min.shape[0] != nu or spec.u_max.shape[0] != nu:
        raise DimensionError("input bounds must have nu entries")
    if spec.state_lb.shape[0] != nx or spec.state_ub.shape[0] != nx:
        raise DimensionError("state bounds must have nx entries")

    powers = [np.eye(nx)]
    for _ in range(N):
        powers.append(model.A @ powers[-1])

    Gamma = np.zeros((N * nx, N * nu))
    Phi = np.zeros((N * nx, nx))
    for k in range(1, N + 1):
        Phi[(k - 1) * nx:k * nx] = powers[k]
        for i in range(k):
            Gamma[(k - 1) * nx:k * nx, i * nu:(i + 1) * nu] = (
                powers[k - 1 - i] @ model.B)

    Qbar = np.kron(np.eye(N), spec.Q_stage)
    Rbar = np.kron(np.eye(N), spec.R_stage)
    H = Gamma.T @ Qbar @ Gamma + Rbar
    if spec.beta > 0.0:
        D = np.zeros((N, N))
        for t in range(N):
            D[t, t] = 1.0
            if t > 0:
                D[t, t - 1] = -1.0
        H = H + spec.beta * np.kron(D.T @ D, np.eye(nu))
    H = 0.5 * (H + H.T)
    Kq = Gamma.T @ Qbar @ Phi

    sel = [j for j in range(nx)
           if math.isfinite(spec.state_lb[j]) or math.isfinite(spec.state_ub[j])]
    if sel:
        rows = [(k - 1) * nx + j for k in range(1, N + 1) for j in sel]
        Gbar = np.ascontiguousarray(Gamma[rows])
        Phi_sel = np.ascontiguousarray(Phi[rows])
        clb = np.tile(spec.state_lb[sel], N)
        cub = np.tile(spec.state_ub[sel], N)
    else:
        Gbar = np.zeros((0, N * nu))
        Phi_sel = np.zeros((0, nx))
        clb = np.zeros(0)
        cub = np.zeros(0)

    box = Box(np.tile(spec.u_min, N), np.tile(spec.u_max, N))
    return CondensedQp(H=H, Kq=Kq, Gbar=Gbar, Phi_sel=Phi_sel,
                       clb=clb, cub=cub, box=box, horizon=N, nu=nu, nx=nx,
                       beta=spec.beta)


def balancing_robot_spec(horizon: int = 10, beta: float = 0.1,
                         angle_limit_deg: float = 15.0,
                         position_limit: float = 0.5,
                         input_limit: float = 12.0) -> MpcSpec:
    """Weights and constraints of the robot study.

    The model's angle state is in radians, so the degree-valued angle limit
    is converted; the position limit is in meters and the input limit is the
    duty-cycle percentage bound.
    """
    angle_limit = math.radians(angle_limit_deg)
    inf = math.inf
    return MpcSpec(
        horizon=horizon,
        Q_stage=np.diag([1.0, 1.0, 600.0, 1.0]),
        R_stage=np.array([[2.0]]),
        u_min=np.array([-input_limit]),
        u_max=np.array([input_limit]),
        state_lb=np.array([-position_limit, -inf, -angle_limit, -inf]),
        state_ub=np.array([position_limit, inf, angle_limit, inf]),
        beta=beta,
    )


@dataclass(frozen=True)
class DisturbanceConfig:
    """Additive state perturbation applied every ``period`` steps."""

    period: int = 20
    offsets: np.ndarray = field(
        default_factory=lambda: np.array([0.0, -0.05, 0.05, 0.0]))

    def __post_init__(self):
        if self.period < 1:
            raise DataValidationError("disturbance period must be >= 1")
        object.__setattr__(self, "offsets",
                           linalg.as_vector(self.offsets, "offsets"))


@dataclass
class Trajectory:
    """Closed-loop record: states (steps+1, nx), inputs (steps, nu), and
    per-step solver statistics."""

    states: np.ndarray
    inputs: np.ndarray
    outer_iters: np.ndarray
    inner_totals: np.ndarray
    statuses: list

    @property
    def steps(self) -> int:
        return self.inputs.shape[0]


def simulate_closed_loop(model: LtiModel, spec: MpcSpec, x0,
                         solver_cfg: outer.SolveConfig, steps: int,
                         disturbance: DisturbanceConfig | None = None
                         ) -> Trajectory:
    """Run receding-horizon control for ``steps`` plant steps.

    Each step rebuilds the QP's linear data from the current state and the
    previously applied input, solves it warm-starting both the primal input
    sequence and the multipliers from the previous step, applies the first
    input, and advances the plant (plus the scheduled disturbance).  The
    condensed matrices and solver constants are computed once.
    """
    if steps < 1:
        raise DataValidationError("steps must be at least 1")
    x0 = linalg.as_vector(x0, "initial state")
    if x0.shape[0] != model.nx:
        raise DimensionError(
            f"initial state has {x0.shape[0]} entries, expected {model.nx}")
    if disturbance is not None and disturbance.offsets.shape[0] != model.nx:
        raise DimensionError("disturbance offsets must have nx entries")

    cqp = condense(model, spec)
    u_prev = np.zeros(model.nu)
    nqp0 = problem.normalize(cqp.to_problem(x0, u_prev))
    consts = problem.constants(nqp0)

    nx, nu = model.nx, model.nu
    states = np.zeros((steps + 1, nx))
    inputs = np.zeros((steps, nu))
    outer_iters = np.zeros(steps, dtype=np.int64)
    inner_totals = np.zeros(steps, dtype=np.int64)
    statuses = []

    states[0] = x0
    x = x0.copy()
    dual_warm = np.zeros(nqp0.p)
    primal_warm = np.zeros(cqp.H.shape[0])

    for t in range(steps):
        nqp = problem.normalize(cqp.to_problem(x, u_prev))
        step_cfg = dataclasses.replace(solver_cfg, y0=dual_warm,
                                       warm_primal=primal_warm)
        try:
            res = outer.solve(nqp, consts, step_cfg)
        except DualQpError as exc:
            raise DualQpError(f"MPC step {t}: solver failed: {exc}") from exc
        u_t = res.u_out[:nu].copy()
        inputs[t] = u_t
        outer_iters[t] = res.outer_iterations
        inner_totals[t] = res.total_inner_iterations
        statuses.append(res.status)

        x = model.A @ x + model.B @ u_t
        if disturbance is not None and (t + 1) % disturbance.period == 0:
            x = x + disturbance.offsets
        states[t + 1] = x
        u_prev = u_t
        dual_warm = res.x_out
        primal_warm = res.u_out
    return Trajectory(states=states, inputs=inputs, outer_iters=outer_iters,
                      inner_totals=inner_totals, statuses=statuses)


def write_trajectory_csv(traj: Trajectory, path):
    """Robot-scenario CSV: ``t,h,hdot,theta,thetadot,u,outer_iters,solve_inner_total``."""
    if traj.states.shape[1] != 4 or traj.inputs.shape[1] != 1:
        raise DimensionError(
            "trajectory CSV schema expects 4 states and a scalar input")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t,h,hdot,theta,thetadot,u,outer_iters,solve_inner_total\n")
        for t in range(traj.steps):
            h, hdot, th, thdot = traj.states[t]
            fh.write(f"{t},{h!r},{hdot!r},{th!r},{thdot!r},"
                     f"{traj.inputs[t, 0]!r},{traj.outer_iters[t]},"
                     f"{traj.inner_totals[t]}\n")
