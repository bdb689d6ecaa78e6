"""Command-line interface.

Subcommands: ``scenario generate``, ``dataset generate``, ``optimize``,
``route``, ``evaluate``, ``report``, and ``stub-evaluator`` (a constant-score
wire-protocol peer for integration testing).

Exit codes are a stable contract for scripts: 0 success, 2 usage error,
3 bad or infeasible input, 4 evaluator/protocol failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import statistics
import subprocess
import sys
import time

from . import __version__
from .annealing import (
    CoolingPolicy,
    RunHistory,
    SaConfig,
    load_history,
    optimize,
    save_history,
)
from .contact_plan import load_plan, require_feasible, save_plan
from .dataset import DiversityPolicy, generate_corpus, save_corpus
from .errors import AnnealingAborted, CpdError, EvaluatorError
from .objective import (
    DEFAULT_TIMEOUT_SECONDS,
    ExactEvaluator,
    OracleEvaluator,
    RemoteEvaluator,
)
from .routing import cgds, contact_graph_for_plan
from .scenario import (
    OrbitSpec,
    RequirementPolicy,
    Scenario,
    TimeGrid,
    VisibilityParams,
    generate_scenario,
    load_scenario,
    random_stations,
    save_scenario,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BAD_INPUT = 3
EXIT_EVALUATOR = 4


def build_version() -> str:
    """Git describe when running from a checkout, package version otherwise."""
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=os.path.dirname(os.path.abspath(__file__)),
            capture_output=True,
            text=True,
            timeout=5,
        )
        if result.returncode == 0 and result.stdout.strip():
            return result.stdout.strip()
    except OSError:
        pass
    return f"cpd-{__version__}"


def _err(message: str) -> None:
    print(f"cpd: {message}", file=sys.stderr)


# ---------------------------------------------------------------------------
# Evaluator construction
# ---------------------------------------------------------------------------


def _make_evaluator(args: argparse.Namespace, scenario: Scenario):
    if args.evaluator == "exact-cgr":
        return ExactEvaluator(scenario, workers=args.workers)
    if args.evaluator == "oracle":
        return OracleEvaluator(scenario)
    if args.evaluator == "surrogate":
        if not args.endpoint:
            args.command_parser.error("--endpoint is required with --evaluator surrogate")
        return RemoteEvaluator(
            args.endpoint,
            n_nodes=scenario.n_nodes,
            n_steps=scenario.grid.step_count,
            timeout=args.timeout,
        )
    raise AssertionError(f"unhandled evaluator {args.evaluator!r}")


def _add_evaluator_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--evaluator",
        choices=["exact-cgr", "surrogate", "oracle"],
        default="exact-cgr",
        help="scoring backend (default: exact-cgr)",
    )
    parser.add_argument(
        "--endpoint",
        default=None,
        help="surrogate endpoint: 'host:port' for TCP, otherwise a command to spawn",
    )
    parser.add_argument(
        "--timeout",
        type=float,
        default=DEFAULT_TIMEOUT_SECONDS,
        help="seconds to wait for each surrogate reply (default: %(default)s)",
    )
    parser.add_argument(
        "--workers",
        type=int,
        default=1,
        help="worker threads for the exact evaluator (default: 1)",
    )


# ---------------------------------------------------------------------------
# scenario generate
# ---------------------------------------------------------------------------


def cmd_scenario_generate(args: argparse.Namespace) -> int:
    spec = OrbitSpec(
        altitude_km=args.altitude_km,
        inclination_deg=args.inclination_deg,
        plane_count=args.planes,
        sats_per_plane=args.sats_per_plane,
        phasing=args.phasing,
    )
    grid = TimeGrid(step_count=args.steps, step_seconds=args.step_seconds)
    stations = random_stations(args.stations, args.seed)
    scenario = generate_scenario(
        spec,
        stations,
        grid,
        visibility_params=VisibilityParams(
            isl_max_range_km=args.isl_range_km,
            min_elevation_deg=args.min_elevation_deg,
        ),
        requirement_policy=RequirementPolicy.random_k(args.requirements_k),
        budget_isl=args.budget_isl,
        budget_gsl=args.budget_gsl,
        per_step_degree_cap=args.cap,
        seed=args.seed,
        metadata={"tool_version": build_version()},
    )
    save_scenario(scenario, args.out)
    print(
        f"wrote {args.out}: {scenario.n_satellites} satellites, "
        f"{scenario.n_stations} stations, {grid.step_count} steps, "
        f"{len(scenario.visible_triples())} visible (step, link) slots, "
        f"fingerprint {scenario.fingerprint()[:12]}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# dataset generate
# ---------------------------------------------------------------------------


def cmd_dataset_generate(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    policy = DiversityPolicy(
        random_fraction=args.random_fraction,
        max_burst=args.max_burst,
        trajectory_iterations=args.trajectory_iters,
    )
    records = generate_corpus(
        scenario, args.count, policy, args.seed, workers=args.workers
    )
    written = save_corpus(records, args.out)
    meta = {
        "command": "dataset generate",
        "tool_version": build_version(),
        "seed": args.seed,
        "count": args.count,
        "scenario_path": args.scenario,
        "scenario_fingerprint": scenario.fingerprint(),
        "policy": {
            "random_fraction": policy.random_fraction,
            "max_burst": policy.max_burst,
            "trajectory_iterations": policy.trajectory_iterations,
            "initial_temperature": policy.initial_temperature,
            "cooling_rate": policy.cooling_rate,
        },
    }
    with open(args.out + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {written} records to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# optimize
# ---------------------------------------------------------------------------


def cmd_optimize(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    config = SaConfig(
        initial_temperature=args.temp,
        cooling_rate=args.cool,
        iterations=args.iters,
        seed=args.seed,
        cooling_policy=CoolingPolicy(args.cooling_policy),
    )
    stamp = {
        "tool_version": build_version(),
        "scenario_path": args.scenario,
        "scenario_fingerprint": scenario.fingerprint(),
    }

    evaluator = _make_evaluator(args, scenario)
    try:
        best, history = optimize(scenario, config, evaluator)
    except AnnealingAborted as exc:
        partial = exc.history
        partial.metadata.update(stamp)
        partial.metadata["aborted"] = str(exc)
        if args.out_history:
            save_history(partial, args.out_history)
            _err(f"partial history ({len(partial.rows)} rows) saved to {args.out_history}")
        _err(f"optimization aborted: {exc}")
        return EXIT_EVALUATOR
    finally:
        evaluator.close()

    history.metadata.update(stamp)
    if args.out_history:
        save_history(history, args.out_history)
    if args.out_plan:
        save_plan(
            best,
            args.out_plan,
            metadata={
                **stamp,
                "seed": config.seed,
                "iterations": config.iterations,
                "initial_temperature": config.initial_temperature,
                "cooling_rate": config.cooling_rate,
                "cooling_policy": config.cooling_policy.value,
                "evaluator": args.evaluator,
            },
        )

    factor = history.metadata["normalized_factor"]
    initial = history.rows[0].f_best / factor
    final = history.rows[-1].f_best / factor
    print(
        f"optimize: initial {initial:.6f} -> best {final:.6f} normalized "
        f"({history.improvement_percent():.1f}% improvement, "
        f"{config.iterations} iterations, seed {config.seed})"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def cmd_evaluate(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    plan = load_plan(args.plan, n_nodes=scenario.n_nodes)
    require_feasible(plan, scenario)
    evaluator = _make_evaluator(args, scenario)
    try:
        timings = []
        value = None
        for _ in range(args.repeat):
            begin = time.perf_counter()
            value = evaluator.evaluate(plan)
            timings.append(time.perf_counter() - begin)
    finally:
        evaluator.close()
    payload = {
        "normalized": value.normalized,
        "raw_minutes": value.raw,
        "triple_count": value.triple_count,
        "unreachable_count": value.unreachable_count,
        "repeats": args.repeat,
        "mean_eval_seconds": statistics.fmean(timings),
        "evaluator": evaluator.describe(),
        "tool_version": build_version(),
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# route
# ---------------------------------------------------------------------------


def cmd_route(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    plan = load_plan(args.plan, n_nodes=scenario.n_nodes)
    n = scenario.n_nodes
    if not (0 <= args.source < n and 0 <= args.dest < n):
        args.command_parser.error(f"node ids must lie in [0, {n})")
    if not 0 <= args.start < scenario.grid.step_count:
        args.command_parser.error(f"--start must lie in [0, {scenario.grid.step_count})")

    graph = contact_graph_for_plan(plan, scenario)
    route = cgds(graph, args.source, args.dest, args.start)
    if route is None:
        payload = {
            "source": args.source,
            "destination": args.dest,
            "start_step": args.start,
            "reachable": False,
        }
    else:
        payload = {
            "source": route.source,
            "destination": route.destination,
            "start_step": route.start_step,
            "reachable": True,
            "delivery_step": route.delivery_step,
            "bdt_minutes": route.bdt_minutes,
            "hops": [[c.a, c.b, c.t_start, c.t_end] for c in route.hops],
            "transfer_steps": list(route.transfer_steps),
            "tx_win": list(route.tx_win),
            "volume_steps": route.volume if route.volume != float("inf") else None,
        }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _history_stats(path: str) -> dict:
    history = load_history(path)
    factor = history.metadata.get("normalized_factor")
    if not isinstance(factor, (int, float)) or factor <= 0:
        raise CpdError(f"{path}: history lacks usable normalized_factor metadata")
    evaluator = history.metadata.get("evaluator")
    kind = evaluator.get("kind", "?") if isinstance(evaluator, dict) else "?"
    initial = history.rows[0].f_best / factor
    final = history.rows[-1].f_best / factor
    return {
        "file": path,
        "evaluator": kind,
        "iterations": len(history.rows) - 1,
        "initial_normalized": initial,
        "final_normalized": final,
        "improvement_percent": (initial - final) / initial * 100.0 if initial > 0 else 0.0,
        "mean_eval_ms": statistics.fmean(r.eval_ms for r in history.rows),
    }


def _mean_std(values: list[float]) -> tuple[float, float]:
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std


def cmd_report(args: argparse.Namespace) -> int:
    runs = [_history_stats(path) for path in args.histories]

    header = (
        f"{'run':<40} {'evaluator':<10} {'iters':>6} {'initial':>9} "
        f"{'final':>9} {'improv%':>8} {'eval_ms':>9}"
    )
    print(header)
    print("-" * len(header))
    for run in runs:
        name = os.path.basename(run["file"])[:40]
        print(
            f"{name:<40} {run['evaluator']:<10} {run['iterations']:>6d} "
            f"{run['initial_normalized']:>9.4f} {run['final_normalized']:>9.4f} "
            f"{run['improvement_percent']:>8.1f} {run['mean_eval_ms']:>9.1f}"
        )
    print("-" * len(header))

    init_mean, init_std = _mean_std([r["initial_normalized"] for r in runs])
    final_mean, final_std = _mean_std([r["final_normalized"] for r in runs])
    impr_mean, impr_std = _mean_std([r["improvement_percent"] for r in runs])
    print(
        f"aggregate over {len(runs)} run(s): "
        f"initial {init_mean:.4f}±{init_std:.4f}, "
        f"final {final_mean:.4f}±{final_std:.4f}, "
        f"improvement {impr_mean:.1f}±{impr_std:.1f}%"
    )
    by_kind: dict[str, list[float]] = {}
    for run in runs:
        by_kind.setdefault(run["evaluator"], []).append(run["mean_eval_ms"])
    for kind in sorted(by_kind):
        print(f"mean evaluation wall-clock [{kind}]: {statistics.fmean(by_kind[kind]):.1f} ms")

    if args.out:
        columns = [
            "file",
            "evaluator",
            "iterations",
            "initial_normalized",
            "final_normalized",
            "improvement_percent",
            "mean_eval_ms",
        ]
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(",".join(columns) + "\n")
            for run in runs:
                fh.write(",".join(str(run[c]) for c in columns) + "\n")
        print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# stub evaluator
# ---------------------------------------------------------------------------


def run_stub(stdin, stdout, value: float, die_after: int | None = None, delay: float = 0.0) -> int:
    """Constant-score wire-protocol peer; ``die_after`` simulates a crash."""

    def reply(message: dict) -> None:
        stdout.write(json.dumps(message, separators=(",", ":")) + "\n")
        stdout.flush()

    answered = 0
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            message = json.loads(line)
        except json.JSONDecodeError:
            reply({"type": "error", "id": None, "message": "malformed JSON"})
            continue
        kind = message.get("type") if isinstance(message, dict) else None
        if kind == "hello":
            reply({"type": "hello_ack", "version": 1})
        elif kind == "eval":
            if die_after is not None and answered >= die_after:
                return 3  # simulated crash: vanish without replying
            if delay > 0:
                time.sleep(delay)
            reply({"type": "result", "id": message.get("id"), "objective": value})
            answered += 1
        elif kind == "shutdown":
            return 0
        else:
            reply(
                {
                    "type": "error",
                    "id": message.get("id") if isinstance(message, dict) else None,
                    "message": f"unknown message type {kind!r}",
                }
            )
    return 0


def cmd_stub_evaluator(args: argparse.Namespace) -> int:
    return run_stub(sys.stdin, sys.stdout, args.value, args.die_after, args.delay)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cpd",
        description="Design, score, and optimize satellite contact plans.",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # scenario
    p_scenario = subparsers.add_parser("scenario", help="scenario file tools")
    scenario_sub = p_scenario.add_subparsers(dest="subcommand", required=True)
    p_sgen = scenario_sub.add_parser("generate", help="build a constellation scenario")
    p_sgen.add_argument("--out", required=True, help="output scenario JSON path")
    p_sgen.add_argument("--seed", type=int, default=0)
    p_sgen.add_argument("--planes", type=int, default=5, help="orbital planes (default: 5)")
    p_sgen.add_argument(
        "--sats-per-plane", type=int, default=6, help="satellites per plane (default: 6)"
    )
    p_sgen.add_argument("--altitude-km", type=float, default=550.0)
    p_sgen.add_argument("--inclination-deg", type=float, default=72.0)
    p_sgen.add_argument("--phasing", type=int, default=1)
    p_sgen.add_argument("--stations", type=int, default=20, help="ground stations (default: 20)")
    p_sgen.add_argument("--steps", type=int, default=90, help="horizon steps (default: 90)")
    p_sgen.add_argument("--step-seconds", type=float, default=60.0)
    p_sgen.add_argument("--isl-range-km", type=float, default=5000.0)
    p_sgen.add_argument("--min-elevation-deg", type=float, default=10.0)
    p_sgen.add_argument(
        "--requirements-k", type=int, default=3, help="requirement targets per satellite"
    )
    p_sgen.add_argument("--budget-isl", type=int, default=45)
    p_sgen.add_argument("--budget-gsl", type=int, default=15)
    p_sgen.add_argument("--cap", type=int, default=1, help="per-step link cap per satellite")
    p_sgen.set_defaults(func=cmd_scenario_generate, command_parser=p_sgen)

    # dataset
    p_dataset = subparsers.add_parser("dataset", help="training corpus tools")
    dataset_sub = p_dataset.add_subparsers(dest="subcommand", required=True)
    p_dgen = dataset_sub.add_parser("generate", help="generate a labeled corpus")
    p_dgen.add_argument("--scenario", required=True)
    p_dgen.add_argument("--count", type=int, required=True)
    p_dgen.add_argument("--seed", type=int, default=0)
    p_dgen.add_argument("--out", required=True, help="output NDJSON path")
    p_dgen.add_argument("--random-fraction", type=float, default=0.5)
    p_dgen.add_argument("--max-burst", type=int, default=40)
    p_dgen.add_argument("--trajectory-iters", type=int, default=120)
    p_dgen.add_argument("--workers", type=int, default=1)
    p_dgen.set_defaults(func=cmd_dataset_generate, command_parser=p_dgen)

    # optimize
    p_opt = subparsers.add_parser("optimize", help="anneal a contact plan")
    p_opt.add_argument("--scenario", required=True)
    p_opt.add_argument("--iters", type=int, default=100)
    p_opt.add_argument("--temp", type=float, default=10.0, help="initial temperature")
    p_opt.add_argument("--cool", type=float, default=0.95, help="geometric cooling rate")
    p_opt.add_argument(
        "--cooling-policy",
        choices=[p.value for p in CoolingPolicy],
        default=CoolingPolicy.EVERY_ITERATION.value,
    )
    p_opt.add_argument("--seed", type=int, default=0)
    p_opt.add_argument("--out-plan", default=None, help="write the best plan here")
    p_opt.add_argument("--out-history", default=None, help="write the run history CSV here")
    _add_evaluator_flags(p_opt)
    p_opt.set_defaults(func=cmd_optimize, command_parser=p_opt)

    # evaluate
    p_eval = subparsers.add_parser("evaluate", help="score one plan")
    p_eval.add_argument("--scenario", required=True)
    p_eval.add_argument("--plan", required=True)
    p_eval.add_argument(
        "--repeat", type=int, default=1, help="evaluate N times and report the mean wall-clock"
    )
    _add_evaluator_flags(p_eval)
    p_eval.set_defaults(func=cmd_evaluate, command_parser=p_eval)

    # route
    p_route = subparsers.add_parser("route", help="best route between two nodes")
    p_route.add_argument("--scenario", required=True)
    p_route.add_argument("--plan", required=True)
    p_route.add_argument("--source", type=int, required=True)
    p_route.add_argument("--dest", type=int, required=True)
    p_route.add_argument("--start", type=int, default=0, help="start step (default: 0)")
    p_route.set_defaults(func=cmd_route, command_parser=p_route)

    # report
    p_report = subparsers.add_parser("report", help="summarize run histories")
    p_report.add_argument("histories", nargs="+", help="history CSV files")
    p_report.add_argument("--out", default=None, help="write per-run stats CSV here")
    p_report.set_defaults(func=cmd_report, command_parser=p_report)

    # stub evaluator
    p_stub = subparsers.add_parser(
        "stub-evaluator", help="constant-score evaluator speaking the wire protocol on stdio"
    )
    p_stub.add_argument("--value", type=float, default=0.5)
    p_stub.add_argument(
        "--die-after", type=int, default=None, help="crash after N eval replies (for testing)"
    )
    p_stub.add_argument(
        "--delay", type=float, default=0.0, help="seconds to sleep before each result"
    )
    p_stub.set_defaults(func=cmd_stub_evaluator, command_parser=p_stub)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse printed the message already
        return int(exc.code or 0)

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    try:
        return args.func(args)
    except SystemExit as exc:  # parser.error inside a command
        return int(exc.code or 0)
    except EvaluatorError as exc:
        _err(str(exc))
        return EXIT_EVALUATOR
    except CpdError as exc:
        _err(str(exc))
        return EXIT_BAD_INPUT
    except OSError as exc:
        _err(str(exc))
        return EXIT_BAD_INPUT
    except ValueError as exc:
        _err(str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
