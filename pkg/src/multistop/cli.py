"""Command-line front end.

Subcommands: solve-dp, solve-house, solve-put, simulate, oracle-check.
Exit codes: 0 success, 1 input error, 2 solver error, 3 oracle mismatch.
All randomness defaults to a fixed seed (0xC0FFEE) so runs are reproducible;
the ``--plots`` flag renders matplotlib figures next to the delimited output.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import closedform, core, dp, mc, oracle

DEFAULT_SEED = 0xC0FFEE

EXIT_INPUT_ERROR = 1
EXIT_SOLVER_ERROR = 2
EXIT_ORACLE_MISMATCH = 3


class InputError(ValueError):
    pass


class OracleMismatch(RuntimeError):
    pass


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _load_problem(path: str) -> core.StoppingProblem:
    try:
        problem = core.problem_from_json(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(f"input file not found: {path}")
    except (json.JSONDecodeError, KeyError) as exc:
        raise InputError(f"cannot parse problem file {path}: {exc}")
    violations = core.validate_problem(problem)
    if violations:
        raise InputError("invalid problem:\n  " + "\n  ".join(violations))
    return problem


def _parse_offer_law(spec: str):
    kind, _, rest = spec.partition(":")
    if kind == "uniform":
        try:
            a, b = (float(x) for x in rest.split(","))
        except ValueError:
            raise InputError(f"expected uniform:a,b, got {spec!r}")
        return closedform.UniformOfferLaw(a, b)
    if kind == "file":
        data = json.loads(Path(rest).read_text())
        return core.DiscreteDistribution.from_pairs(data["support"])
    raise InputError(f"unknown offer law {spec!r} (use uniform:a,b or file:path)")


def _parse_delay_law(spec: str) -> core.DiscreteDistribution:
    kind, _, rest = spec.partition(":")
    try:
        if kind == "geometric":
            return core.DiscreteDistribution.truncated_geometric(float(rest))
        if kind == "point":
            return core.DiscreteDistribution.point_mass(float(rest))
        if kind == "file":
            data = json.loads(Path(rest).read_text())
            return core.DiscreteDistribution.from_pairs(data["support"])
    except (ValueError, core.ModelError) as exc:
        raise InputError(f"bad delay law {spec!r}: {exc}")
    raise InputError(f"unknown delay law {spec!r} (use geometric:p, point:k or file:path)")


def _out_dir(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_solve_dp(args) -> int:
    problem = _load_problem(args.input)
    if not isinstance(problem.dynamics, core.FiniteMarkovModel):
        raise InputError("solve-dp handles finite Markov problems; use solve-put for GBM")
    cascade, policy = dp.solve_cascade(problem)
    out = _out_dir(args)
    csv_text = dp.cascade_to_csv(problem.dynamics, cascade, policy)
    (out / "cascade.csv").write_text(csv_text)
    _dump_json(core.policy_to_dict(policy), out / "policy.json")
    if args.plots:
        from . import plots

        plots.save_cascade_figure(problem.dynamics, cascade, policy, str(out / "cascade.png"))
    if args.format == "csv":
        sys.stdout.write(csv_text)
    elif args.format == "json":
        print(json.dumps(core.policy_to_dict(policy), sort_keys=True, indent=2))
    else:
        n = cascade.n_exercises
        print(f"{'state':>12} " + " ".join(f"{f'V_{k}':>14}" for k in range(1, n + 1)))
        for i, s in enumerate(problem.dynamics.states):
            vals = " ".join(f"{cascade.values[k][i]:>14.8f}" for k in range(n))
            print(f"{s:>12.6f} {vals}")
    return 0


def _cmd_solve_house(args) -> int:
    offer_law = _parse_offer_law(args.offer_law)
    delay_law = _parse_delay_law(args.delay_law)
    solution = closedform.solve_house(offer_law, args.alpha, delay_law, args.n)
    out = _out_dir(args)
    _dump_json(solution.to_dict(), out / "house_solution.json")
    if args.plots:
        from . import plots

        plots.save_house_figure(solution, str(out / "house.png"))
    if args.format == "json":
        print(json.dumps(solution.to_dict(), sort_keys=True, indent=2))
    else:
        print(solution.table())
    return 0


def _cmd_solve_put(args) -> int:
    solution = closedform.solve_put(args.strike, args.sigma, args.beta, args.z0, args.n)
    out = _out_dir(args)
    _dump_json(solution.to_dict(), out / "put_solution.json")
    if args.plots:
        from . import plots

        plots.save_put_figure(solution, str(out / "put.png"))
    if args.format == "json":
        print(json.dumps(solution.to_dict(), sort_keys=True, indent=2))
    else:
        print(solution.table(args.x0))
    return 0


def _cmd_simulate(args) -> int:
    problem = _load_problem(args.input)
    try:
        policy = core.policy_from_dict(json.loads(Path(args.policy).read_text()))
    except FileNotFoundError:
        raise InputError(f"policy file not found: {args.policy}")
    except (json.JSONDecodeError, KeyError, core.ModelError) as exc:
        raise InputError(f"cannot parse policy file {args.policy}: {exc}")
    if isinstance(problem.dynamics, core.FiniteMarkovModel):
        report = mc.evaluate_policy_chain(
            problem, policy, args.paths, args.seed, initial_state=args.initial_state
        )
    else:
        if not isinstance(problem.reward, core.PutReward):
            raise InputError("GBM simulation needs a put(K) reward")
        report = mc.evaluate_policy_gbm(
            problem.dynamics, problem.reward.strike, policy,
            args.paths, args.dt, args.t_max, args.seed,
        )
    out = _out_dir(args)
    _dump_json(report.to_dict(), out / "report.json")
    if args.per_path_csv:
        lines = ["path,payoff"] + [
            f"{i},{p:.17g}" for i, p in enumerate(report.payoffs)
        ]
        (out / args.per_path_csv).write_text("\n".join(lines) + "\n")
    half = 1.96 * report.std_error
    print(f"estimate: {report.estimate:.8f} +/- {half:.8f} (95% CI, {report.n_paths} paths)")
    return 0


def _cmd_oracle_check(args) -> int:
    result = oracle.run_oracle_check(args.instances, args.seed, tol=args.tol)
    print(
        f"{result.n_instances} instances, worst |brute force - cascade| = "
        f"{result.worst_diff:.3e} (tolerance {args.tol:.1e})"
    )
    if not result.passed:
        raise OracleMismatch(
            f"{len(result.mismatches)} instances exceeded the tolerance: "
            f"{list(result.mismatches)[:10]}"
        )
    print("ok")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multistop",
        description="Optimal multiple stopping with random refraction times",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, output=True):
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        if output:
            p.add_argument("--output-dir", default="multistop-out")
            p.add_argument("--format", choices=("csv", "json", "table"), default="table")
            p.add_argument("--plots", action="store_true",
                           help="render figures next to the output files")

    p = sub.add_parser("solve-dp", help="exact cascade for a finite-chain problem")
    p.add_argument("--input", required=True, help="problem JSON file")
    common(p)
    p.set_defaults(func=_cmd_solve_dp)

    p = sub.add_parser("solve-house", help="closed-form multiple house selling")
    p.add_argument("--offer-law", required=True, help="uniform:a,b or file:path")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--delay-law", required=True, help="geometric:p, point:k or file:path")
    p.add_argument("--n", type=int, required=True)
    common(p)
    p.set_defaults(func=_cmd_solve_house)

    p = sub.add_parser("solve-put", help="closed-form perpetual put with refraction level")
    p.add_argument("--strike", type=float, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--z0", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--x0", type=float, default=None, help="price for the value column")
    common(p)
    p.set_defaults(func=_cmd_solve_put)

    p = sub.add_parser("simulate", help="Monte Carlo policy evaluation")
    p.add_argument("--input", required=True, help="problem JSON file")
    p.add_argument("--policy", required=True, help="policy JSON file")
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--initial-state", type=int, default=0, help="chain start state index")
    p.add_argument("--dt", type=float, default=1e-3, help="GBM grid step")
    p.add_argument("--t-max", type=float, default=400.0, help="GBM horizon")
    p.add_argument("--per-path-csv", default=None, help="also write per-path payoffs")
    common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("oracle-check", help="brute force vs cascade on random instances")
    p.add_argument("--instances", type=int, default=200)
    p.add_argument("--tol", type=float, default=oracle.DEFAULT_TOL)
    common(p, output=False)
    p.set_defaults(func=_cmd_oracle_check)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, core.ModelError, closedform.ClosedFormInputError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except (dp.SolverError, closedform.BranchValidityError, ValueError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER_ERROR
    except OracleMismatch as exc:
        print(f"oracle mismatch: {exc}", file=sys.stderr)
        return EXIT_ORACLE_MISMATCH


if __name__ == "__main__":
    sys.exit(main())
