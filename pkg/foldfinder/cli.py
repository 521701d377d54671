"""
Command line front end: solve, certify, trace, probe, sweep and list.

Structured outputs are JSON manifests; branch and sweep tables can also be
written as CSV. Exit codes: 0 ok, 1 certification negative, 2 usage or
parse error, 3 numerical failure.
"""
import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from time import perf_counter
from typing import Callable, Dict, List, Optional

import numpy as np

from .certify import certify_saddle_node, probe_no_solutions_above, probe_starts
from .constants import SCHEMA_VERSION, THREADS_ENV, VERSION
from .continuation import (
    ContinuationConfig,
    fold_from_branch,
    initial_point,
    trace_branch,
    trace_through,
)
from .errors import FoldFinderError, UsageError
from .problems import (
    ProblemSpec,
    build_system,
    list_problems,
    load_problem,
    problem_data,
    resolve_problem,
)
from .solver import SolveConfig, Strategy, solve_maxmin

_log = logging.getLogger(__name__)


class Stages:
    """Runs pipeline stages and remembers how long each one took."""

    def __init__(self):
        self.timings: Dict[str, float] = {}

    def run(self, name: str, fun: Callable, *args, **kwargs):
        start = perf_counter()
        result = fun(*args, **kwargs)
        duration = perf_counter() - start
        self.timings[name] = duration
        _log.info("stage %s ran for %.3fs", name, duration)
        return result


def _to_json(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def manifest(args, spec: ProblemSpec, config, result, stages: Stages):
    return {
        "schema_version": SCHEMA_VERSION,
        "tool_version": VERSION,
        "command": args.command,
        "problem": spec.name,
        "problem_hash": hashlib.sha256(spec.source.encode()).hexdigest(),
        "config": config,
        "seed": args.seed,
        "result": result,
        "metadata": {
            "stages": stages.timings,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        },
    }


def write_json(data, out: Optional[str]):
    text = json.dumps(data, indent=2, sort_keys=True, default=_to_json)
    if out:
        Path(out).write_text(text + "\n")
        _log.info("wrote %s", out)
    else:
        print(text)


def workers(args) -> Optional[int]:
    if args.workers is not None:
        return args.workers
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}")
    return os.cpu_count()


def load(args):
    spec = load_problem(resolve_problem(args.problem))
    return spec, build_system(spec)


def read_solution(path):
    """x_star and lambda_star from a `solve` manifest."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as error:
        raise UsageError(f"cannot read solve output {path}: {error}") from error
    if data.get("schema_version") != SCHEMA_VERSION or "result" not in data:
        raise UsageError(f"{path} is not a solve output of schema {SCHEMA_VERSION}")
    result = data["result"]
    try:
        return np.asarray(result["x_star"], dtype=float), float(result["lambda_star"])
    except KeyError as error:
        raise UsageError(f"{path} has no {error} entry") from error


def point_from_args(args):
    if args.from_file:
        return read_solution(args.from_file)
    if args.x is None or args.lam is None:
        return None
    return np.asarray(args.x, dtype=float), float(args.lam)


def solve_config(args) -> SolveConfig:
    return SolveConfig(
        strategy=args.strategy,
        multistart=args.starts,
        seed=args.seed,
        resolution=args.resolution,
        max_iters=args.max_iters,
        polish=not args.no_polish,
        strict=args.strict,
        workers=workers(args),
    )


# ---- commands ---- #


def cmd_solve(args) -> int:
    stages = Stages()
    spec, system = stages.run("load", load, args)
    config = solve_config(args)
    result = stages.run("solve", solve_maxmin, system, config)
    write_json(manifest(args, spec, config.to_dict(), result.to_dict(), stages), args.out)
    if result.unbounded_suspected:
        _log.warning("unbounded suspected: lambda may be unbounded above on Q")
    return 0


def cmd_certify(args) -> int:
    stages = Stages()
    spec, system = stages.run("load", load, args)
    point = point_from_args(args)
    if point is None:
        raise UsageError("certify needs --x and --lambda, or --from")
    x, lam = point

    evidence = ""
    if args.probe_starts:
        starts = probe_starts(system, args.probe_starts, args.seed)
        above = lam + 0.05 * (1 + abs(lam))
        probe = stages.run(
            "probe", probe_no_solutions_above, system, above, starts, workers=workers(args)
        )
        evidence = f"probe at lambda={above:.6g}: {len(probe.converged_in_Q)} roots from {probe.attempts} starts"

    certificate = stages.run("certify", certify_saddle_node, system, x, lam, evidence=evidence)
    config = {"probe_starts": args.probe_starts}
    write_json(manifest(args, spec, config, certificate.to_dict(), stages), args.out)
    print(certificate.report(), file=sys.stderr)
    return 0 if certificate.certified else 1


def cmd_trace(args) -> int:
    stages = Stages()
    spec, system = stages.run("load", load, args)
    config = ContinuationConfig(step=args.step, max_points=args.max_points, direction=args.direction)
    point = point_from_args(args)
    if point is None:
        start = stages.run("start", initial_point, system)
        branch = stages.run("trace", trace_branch, system, start, config)
    else:
        branch = stages.run("trace", trace_through, system, point, config, workers(args))
    folds = stages.run("folds", fold_from_branch, branch)

    if args.csv:
        branch.to_csv(args.csv)
        _log.info("wrote %s", args.csv)
    result = {
        "branch": branch.summary(),
        "folds": [
            {"x": fold.x, "lambda": fold.lam, "kind": fold.kind, "tangent_lambda": fold.tangent_lambda}
            for fold in folds
        ],
    }
    config_dict = {"step": config.step, "max_points": config.max_points, "direction": config.direction}
    write_json(manifest(args, spec, config_dict, result, stages), args.out)
    return 0


def cmd_probe(args) -> int:
    stages = Stages()
    spec, system = stages.run("load", load, args)
    starts = probe_starts(system, args.starts, args.seed)
    report = stages.run(
        "probe", probe_no_solutions_above, system, args.lam, starts, workers=workers(args)
    )
    config = {"lambda": args.lam, "starts": args.starts}
    write_json(manifest(args, spec, config, report.to_dict(), stages), args.out)
    return 0


def _parse_value(param, text):
    if param == "n":
        try:
            return int(text)
        except ValueError:
            raise UsageError(f"n must be an integer, got {text!r}")
    try:
        return float(text)
    except ValueError:
        raise UsageError(f"{param} values must be numbers, got {text!r}")


def cmd_sweep(args) -> int:
    stages = Stages()
    spec, _ = stages.run("load", load, args)
    config = solve_config(args)
    rows = []
    for text in args.values:
        value = _parse_value(args.param, text)
        system = build_system(spec.with_param(args.param, value))
        result = stages.run(f"solve {args.param}={value}", solve_maxmin, system, config)
        rows.append(
            {
                "param": args.param,
                "value": value,
                "lambda_star": result.lambda_star,
                "stationarity_residual": result.stationarity_residual,
                "starts_converged": result.starts_converged,
            }
        )

    if args.csv:
        with Path(args.csv).open("w", newline="") as file:
            writer = csv.DictWriter(file, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        _log.info("wrote %s", args.csv)
    config_dict = {**config.to_dict(), "param": args.param, "values": args.values}
    write_json(manifest(args, spec, config_dict, {"rows": rows}, stages), args.out)
    return 0


def cmd_list(args) -> int:
    for name in list_problems():
        data = problem_data(name)
        print(f"{name:<20} {data.kind:<18} n={data.n}  {data.description}")
    return 0


# ---- argument parsing ---- #


def _add_solve_options(parser):
    parser.add_argument(
        "--strategy",
        choices=[s.value for s in Strategy],
        default=Strategy.EPIGRAPH_SLP.value,
    )
    parser.add_argument("--starts", type=int, default=8, help="Number of multistarts.")
    parser.add_argument("--resolution", type=int, default=200, help="Grid points per axis (grid-oracle).")
    parser.add_argument("--max-iters", type=int, default=SolveConfig.max_iters, dest="max_iters")
    parser.add_argument("--no-polish", action="store_true", dest="no_polish",
                        help="Skip the extended-system refinement of nearly-equal ratios.")
    parser.add_argument("--strict", action="store_true", help="Fail when no start converges.")


def _add_point_options(parser):
    parser.add_argument("--x", type=float, nargs="+", help="Point coordinates.")
    parser.add_argument("--lambda", type=float, dest="lam", help="Parameter value.")
    parser.add_argument("--from", dest="from_file", help="Take (x*, lambda*) from a solve output.")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="foldfinder",
        description="Maximal saddle-node bifurcations through the max-min of g_i / h_i.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("-q", "--quiet", action="store_true")
    parser.add_argument("--workers", type=int, default=None,
                        help=f"Worker threads (default: ${THREADS_ENV} or the number of cores).")
    parser.add_argument("--seed", type=int, default=0)
    commands = parser.add_subparsers(dest="command", required=True)

    solve = commands.add_parser("solve", help="Maximize lambda(x).")
    solve.add_argument("problem")
    _add_solve_options(solve)
    solve.add_argument("--out")
    solve.set_defaults(run=cmd_solve)

    certify = commands.add_parser("certify", help="Check the fold certificate at a point.")
    certify.add_argument("problem")
    _add_point_options(certify)
    certify.add_argument("--probe-starts", type=int, default=0, dest="probe_starts",
                         help="Also probe for roots above lambda from this many starts.")
    certify.add_argument("--out")
    certify.set_defaults(run=cmd_certify)

    trace = commands.add_parser("trace", help="Trace a solution branch and refine its folds.")
    trace.add_argument("problem")
    _add_point_options(trace)
    trace.add_argument("--step", type=float, default=ContinuationConfig.step)
    trace.add_argument("--max-points", type=int, default=ContinuationConfig.max_points, dest="max_points")
    trace.add_argument("--direction", type=int, choices=(-1, 1), default=1)
    trace.add_argument("--csv", help="Write the branch as CSV.")
    trace.add_argument("--out")
    trace.set_defaults(run=cmd_trace)

    probe = commands.add_parser("probe", help="Look for roots at a fixed lambda.")
    probe.add_argument("problem")
    probe.add_argument("--lambda", type=float, dest="lam", required=True)
    probe.add_argument("--starts", type=int, default=200)
    probe.add_argument("--out")
    probe.set_defaults(run=cmd_probe)

    sweep = commands.add_parser("sweep", help="lambda* as a function of one problem parameter.")
    sweep.add_argument("problem")
    sweep.add_argument("--param", required=True)
    sweep.add_argument("--values", nargs="+", required=True)
    _add_solve_options(sweep)
    sweep.add_argument("--csv", help="Write the table as CSV.")
    sweep.add_argument("--out")
    sweep.set_defaults(run=cmd_sweep)

    listing = commands.add_parser("list", help="Show the bundled problems.")
    listing.set_defaults(run=cmd_list)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    level = logging.ERROR if args.quiet else [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.run(args)
    except FoldFinderError as error:
        print(f"foldfinder: {error}", file=sys.stderr)
        return error.exit_code


if __name__ == "__main__":
    sys.exit(main())
