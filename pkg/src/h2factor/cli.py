"""Command line front end.

Subcommands: run (one experiment), sweep (size scaling with fitted
slopes), threads (thread scaling), validate (dense reference check at
small n).  Exit code 0 on success, 2 when a validation bound fails,
1 on any runtime error.
"""

from __future__ import annotations

import argparse
import sys

from .harness import (
    PROBLEMS,
    ExperimentConfig,
    run,
    scaling_sweep,
    thread_sweep,
    validate,
    write_outputs,
    write_sweep_outputs,
    write_thread_outputs,
)


def _add_common(parser):
    parser.add_argument("--problem", required=True, choices=sorted(PROBLEMS))
    parser.add_argument("--n", type=int, required=True)
    parser.add_argument("--m", type=int, default=None,
                        help="leaf size override")
    parser.add_argument("--p0", type=int, default=None,
                        help="leaf interpolation order override")
    parser.add_argument("--eta", type=float, default=None,
                        help="admissibility constant override")
    parser.add_argument("--alpha-r", type=float, default=None,
                        dest="alpha_r", help="diagonal regularization")
    parser.add_argument("--eps", type=float, default=None,
                        help="compression tolerance")
    parser.add_argument("--eps-lu", type=float, default=None,
                        dest="eps_lu", help="factorization tolerance")
    parser.add_argument("--refine-steps", type=int, default=None,
                        dest="refine_steps",
                        help="iterative refinement steps after substitution")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--deterministic", action="store_true", default=True)
    parser.add_argument("--oracle-cap", type=int, default=4096,
                        dest="oracle_cap")
    parser.add_argument("--out", default=None, help="output directory")


def _overrides(args):
    return dict(
        m=args.m, p0=args.p0, eta=args.eta, alpha_r=args.alpha_r,
        eps=args.eps, eps_lu=args.eps_lu, refine_steps=args.refine_steps,
        threads=args.threads, seed=args.seed,
        deterministic=args.deterministic, oracle_cap=args.oracle_cap,
        out=args.out,
    )


def _parse_args(argv):
    parser = argparse.ArgumentParser(
        prog="h2factor",
        description="hierarchical direct solver benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="one experiment")
    _add_common(p_run)

    p_sweep = sub.add_parser("sweep", help="size scaling sweep")
    _add_common(p_sweep)
    p_sweep.add_argument("--sizes", required=True,
                         help="comma separated problem sizes")

    p_threads = sub.add_parser("threads", help="thread scaling sweep")
    _add_common(p_threads)
    p_threads.add_argument("--thread-list", required=True,
                           dest="thread_list",
                           help="comma separated thread counts")

    p_val = sub.add_parser("validate", help="dense reference check")
    _add_common(p_val)

    return parser.parse_args(argv)


def _cmd_run(args):
    config = ExperimentConfig.from_problem(args.problem, args.n,
                                           **_overrides(args))
    report = run(config)
    if args.out:
        write_outputs(report, args.out)
    print(f"problem={args.problem} n={args.n} "
          f"e_b={report.e_b:.3e} "
          f"fact={report.timings['factorization']:.3f}s "
          f"solve={report.timings['solve']:.3f}s "
          f"factor_mb={report.factor_bytes / 1e6:.1f}")
    return 0


def _cmd_sweep(args):
    sizes = [int(s) for s in args.sizes.split(",") if s]
    sweep = scaling_sweep(args.problem, sizes, **_overrides(args))
    if args.out:
        write_sweep_outputs(sweep, args.out)
    for row in sweep["rows"]:
        print(f"n={row['n']:>8d} fact={row['factorization_s']:.3f}s "
              f"solve={row['solve_s']:.3f}s "
              f"factor_mb={row['factor_bytes'] / 1e6:.1f} "
              f"e_b={row['e_b']:.3e}")
    for name, slope in sweep["slopes"].items():
        print(f"slope {name} = {slope:.3f}")
    return 0


def _cmd_threads(args):
    thread_list = [int(s) for s in args.thread_list.split(",") if s]
    rows = thread_sweep(args.problem, args.n, thread_list,
                        **{k: v for k, v in _overrides(args).items()
                           if k != "threads"})
    if args.out:
        write_thread_outputs(rows, args.out)
    for row in rows:
        print(f"threads={row['threads']} fact={row['factorization_s']:.3f}s "
              f"solve={row['solve_s']:.3f}s speedup={row['speedup']:.2f} "
              f"e_b={row['e_b']:.3e}")
    digests = {row["solution_digest"] for row in rows}
    if len(digests) > 1:
        print("warning: solutions differ across thread counts")
        return 2
    return 0


def _cmd_validate(args):
    config = ExperimentConfig.from_problem(args.problem, args.n,
                                           **_overrides(args))
    result = validate(config)
    print(f"problem={args.problem} n={args.n} "
          f"e_b={result['e_b']:.3e} "
          f"solution_error={result['solution_error']:.3e} "
          f"exact_kernel_error={result['solution_error_exact_kernel']:.3e} "
          f"compression_error={result['compression_error']:.3e}")
    if not result["passed"]:
        print(f"validation failed: solution_error "
              f"{result['solution_error']:.3e} vs {result['tol_solution']:.0e}"
              f", e_b {result['e_b']:.3e} vs {result['tol_backward']:.0e}")
        return 2
    print("validation passed")
    return 0


def main(argv=None):
    args = _parse_args(argv if argv is not None else sys.argv[1:])
    handlers = {
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "threads": _cmd_threads,
        "validate": _cmd_validate,
    }
    try:
        return handlers[args.command](args)
    except Exception as exc:  # surface the failing stage, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
