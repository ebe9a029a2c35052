"""Command-line front-end.

Subcommands: solve, certify, bench-sensitivity, bench-scaling, mpc.
Exit codes: 0 on convergence/completion, 2 when an iteration cap or
certificate horizon stopped a solve (partial results are still written),
1 on input or validation errors (the message names the violated invariant).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import bench, certify, mpc, outer, problem
from .errors import DualQpError
from .variants import Recovery, Variant


def _add_common_solver_flags(p: argparse.ArgumentParser):
    p.add_argument("--algorithm", choices=["idgm", "idfgm"], default="idfgm",
                   help="dual update: plain gradient or fast gradient")
    p.add_argument("--recovery", choices=["last", "average"], default="average",
                   help="primal point to report")
    p.add_argument("--eps", type=float, default=1e-2,
                   help="target accuracy for cost gap and infeasibility")
    p.add_argument("--delta", type=float, default=None,
                   help="inner accuracy override (default: certificate rule; "
                        "overriding trades the eps guarantee for the "
                        "plateau bounds)")
    p.add_argument("--max-outer", type=int, default=100_000,
                   help="hard cap on outer iterations")
    p.add_argument("--rd", type=float, default=None,
                   help="dual-optimum distance bound used by certificates")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualqp",
        description="Inexact dual first-order QP solver with complexity "
                    "certificates, benchmarks, and a condensed-MPC simulator.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_solve = sub.add_parser("solve", help="solve a QP from a JSON file")
    _add_common_solver_flags(p_solve)
    p_solve.add_argument("--input", required=True, help="problem JSON path")
    p_solve.add_argument("--trace", default=None,
                         help="write the per-iteration trace CSV here")
    p_solve.add_argument("--output", default=None,
                         help="write the result JSON here (default: stdout)")

    p_cert = sub.add_parser("certify",
                            help="print the complexity certificate as JSON")
    _add_common_solver_flags(p_cert)
    p_cert.add_argument("--input", required=True, help="problem JSON path")
    p_cert.add_argument("--output", default=None,
                        help="write the certificate JSON here (default: stdout)")

    p_sens = sub.add_parser("bench-sensitivity",
                            help="suboptimality traces vs the inner accuracy")
    p_sens.add_argument("--n", type=int, default=50)
    p_sens.add_argument("--p", type=int, default=75)
    p_sens.add_argument("--seed", type=int, default=0)
    p_sens.add_argument("--eps", type=float, default=1e-2)
    p_sens.add_argument("--deltas", default=None,
                        help="comma-separated inner accuracies (default: the "
                             "certificate value and 10x/100x it)")
    p_sens.add_argument("--max-outer", type=int, default=3000)
    p_sens.add_argument("--output", required=True, help="CSV path")

    p_scal = sub.add_parser("bench-scaling",
                            help="outer-iteration counts across dimensions")
    p_scal.add_argument("--dims", default="10,50,100",
                        help="comma-separated primal dimensions")
    p_scal.add_argument("--trials", type=int, default=3)
    p_scal.add_argument("--eps", type=float, default=1e-2)
    p_scal.add_argument("--jobs", type=int, default=1)
    p_scal.add_argument("--output", required=True, help="CSV path")

    p_mpc = sub.add_parser("mpc",
                           help="closed-loop balancing-robot simulation")
    p_mpc.add_argument("--algorithm", choices=["idgm", "idfgm"],
                       default="idgm")
    p_mpc.add_argument("--recovery", choices=["last", "average"],
                       default="last")
    p_mpc.add_argument("--eps", type=float, default=1e-2)
    p_mpc.add_argument("--delta", type=float, default=None)
    p_mpc.add_argument("--max-outer", type=int, default=600)
    p_mpc.add_argument("--steps", type=int, default=200)
    p_mpc.add_argument("--horizon", type=int, default=10)
    p_mpc.add_argument("--beta", type=float, default=0.1)
    p_mpc.add_argument("--disturbance-period", type=int, default=20)
    p_mpc.add_argument("--output", required=True, help="trajectory CSV path")
    return parser


def _solve_config(args) -> outer.SolveConfig:
    return outer.SolveConfig(
        variant=Variant.parse(args.algorithm),
        recovery=Recovery.parse(args.recovery),
        eps=args.eps,
        delta=args.delta,
        max_outer=args.max_outer,
        r_d=getattr(args, "rd", None),
    )


def _cmd_solve(args) -> int:
    qp = problem.load_problem(args.input)
    nqp = problem.normalize(qp)
    consts = problem.constants(nqp)
    res = outer.solve(nqp, consts, _solve_config(args))
    payload = {
        "status": res.status.value,
        "f": res.f,
        "infeas": res.infeas,
        "outer_iterations": res.outer_iterations,
        "total_inner_iterations": res.total_inner_iterations,
        "u": [float(v) for v in res.u_out],
        "x": [float(v) for v in res.x_out],
    }
    text = json.dumps(payload, sort_keys=True)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    if args.trace:
        outer.write_trace_csv(res.trace, args.trace)
    return 0 if res.status is outer.SolveStatus.CONVERGED else 2


def _cmd_certify(args) -> int:
    qp = problem.load_problem(args.input)
    nqp = problem.normalize(qp)
    consts = problem.constants(nqp)
    cert = certify.certificate(nqp, consts, Variant.parse(args.algorithm),
                               Recovery.parse(args.recovery), args.eps,
                               r_d=args.rd)
    text = cert.to_json()
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def _cmd_bench_sensitivity(args) -> int:
    cfg = bench.RandomQpConfig(n=args.n, p=args.p, seed=args.seed)
    if args.deltas is not None:
        deltas = [float(tok) for tok in args.deltas.split(",") if tok]
    else:
        qp = bench.random_qp(cfg)
        nqp = problem.normalize(qp)
        consts = problem.constants(nqp)
        base = certify.delta_rule(Variant.IDFGM, Recovery.AVERAGE, args.eps,
                                  consts, consts.R_d_default)
        deltas = [base, 10.0 * base, 100.0 * base]
    bench.run_sensitivity(cfg, args.eps, deltas, max_outer=args.max_outer,
                          out_path=args.output)
    return 0


def _cmd_bench_scaling(args) -> int:
    dims = [int(tok) for tok in args.dims.split(",") if tok]
    bench.run_scaling(dims, args.trials, args.eps, out_path=args.output,
                      jobs=args.jobs)
    return 0


def _cmd_mpc(args) -> int:
    model = mpc.balancing_robot_model()
    spec = mpc.balancing_robot_spec(horizon=args.horizon, beta=args.beta)
    solver_cfg = outer.SolveConfig(
        variant=Variant.parse(args.algorithm),
        recovery=Recovery.parse(args.recovery),
        eps=args.eps,
        delta=args.delta,
        max_outer=args.max_outer,
        use_certificate_horizon=False,
    )
    x0 = np.array([0.0, 0.0, 0.5, -0.35])
    dist = mpc.DisturbanceConfig(period=args.disturbance_period)
    traj = mpc.simulate_closed_loop(model, spec, x0, solver_cfg, args.steps,
                                    disturbance=dist)
    mpc.write_trajectory_csv(traj, args.output)
    return 0


_COMMANDS = {
    "solve": _cmd_solve,
    "certify": _cmd_certify,
    "bench-sensitivity": _cmd_bench_sensitivity,
    "bench-scaling": _cmd_bench_scaling,
    "mpc": _cmd_mpc,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.subcommand](args)
    except (DualQpError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
