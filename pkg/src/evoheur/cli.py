"""Command-line entry points: run, eval, export, baselines."""
from __future__ import annotations

import argparse
import math
import statistics
import sys
from typing import Optional, Sequence

from .core import (
    BuiltinBody,
    ConfigError,
    Origin,
    RunConfig,
    Verdict,
    load_config,
    make_candidate,
    validate_config,
)
from .evaluators import (
    BppInstance,
    TspInstance,
    evaluate_on_instance,
    generate_bpp_instances,
    generate_tsp_instances,
    load_instance_file,
    nearest_neighbour,
    tour_length,
    two_opt,
)
from .evolution import make_llm, run
from .executor import (
    ExecutorFactory,
    body_from_source,
    registered_builtins,
)
from .runlog import (
    RunLogger,
    export_groups,
    export_trajectory,
    export_turns,
    read_events,
    render_csv,
)


def _parse_override(text: str):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"override must look like key=value: {text!r}")
    for caster in (int, float):
        try:
            return key, caster(value)
        except ValueError:
            continue
    return key, value


def _summary_metric(config: RunConfig, fitness: float) -> str:
    label = "mean excess bins" if config.problem == "bpp" else "mean optimality gap"
    return f"{label}: {fitness * 100.0:.2f}%"


def cmd_run(args: argparse.Namespace) -> int:
    overrides = dict(args.set or [])
    try:
        config = load_config(args.config, overrides)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        for message in exc.errors:
            print(f"config error: {message}", file=sys.stderr)
        return 2
    log = RunLogger(path=args.log, run_id=f"run-{config.problem}-{config.seed}")
    try:
        result = run(config, log=log, checkpoint_path=args.checkpoint)
    finally:
        log.close()
    best = result.best_candidate
    print(f"best candidate: {best.id}")
    print(f"origin: {best.origin.value}  generation: {best.generation_created}")
    if isinstance(best.body, BuiltinBody):
        print(f"body: builtin {best.body.name} {best.body.params}")
    else:
        print("body:")
        print(best.body.source)
    print(f"fitness: {result.best_record.fitness:.6f}")
    print(_summary_metric(config, result.best_record.fitness))
    print(f"log: {args.log}")
    return 0


def _build_instances(args: argparse.Namespace):
    if args.instance:
        return [load_instance_file(path) for path in args.instance]
    if args.problem == "bpp":
        return generate_bpp_instances(args.num_items, args.capacity, args.count, args.seed)
    instances = generate_tsp_instances(args.nodes, args.count, args.seed)
    return instances


def _ensure_references(instances):
    """TSP instances loaded without a reference get the NN+2-opt one."""
    fixed = []
    for inst in instances:
        if isinstance(inst, TspInstance) and inst.reference_cost is None:
            ref = tour_length(two_opt(nearest_neighbour(inst, 0), inst), inst)
            inst = TspInstance(coords=inst.coords, reference_cost=ref, rounded=inst.rounded)
        fixed.append(inst)
    return fixed


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        instances = _ensure_references(_build_instances(args))
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    problems = {"bpp" if isinstance(i, BppInstance) else "tsp" for i in instances}
    if len(problems) != 1:
        print("error: instance files mix problems", file=sys.stderr)
        return 2
    problem = problems.pop()

    if args.candidate.startswith("builtin:"):
        body = BuiltinBody(args.candidate.split(":", 1)[1])
    else:
        try:
            with open(args.candidate, "r", encoding="utf-8") as fh:
                body = body_from_source(fh.read(), problem)
        except OSError as exc:
            print(f"error: cannot read candidate: {exc}", file=sys.stderr)
            return 2
    factory = ExecutorFactory(problem=problem, timeout=args.timeout)
    percents = []
    failures = 0
    with factory.load(body) as session:
        for idx, inst in enumerate(instances):
            outcome = evaluate_on_instance(session, inst, budget_seconds=args.timeout)
            if outcome.verdict is not Verdict.OK:
                failures += 1
                print(f"instance {idx}: verdict={outcome.verdict.value} ({outcome.detail})")
                continue
            if problem == "bpp":
                percents.append(outcome.cost)
                print(f"instance {idx}: excess_bins={outcome.cost:.2f}%")
            else:
                gap = (outcome.cost / inst.reference_cost - 1.0) * 100.0
                percents.append(gap)
                print(
                    f"instance {idx}: tour_length={outcome.cost:.4f} gap={gap:.2f}%"
                )
    if percents:
        label = "mean excess bins" if problem == "bpp" else "mean optimality gap"
        print(f"{label}: {statistics.fmean(percents):.2f}% over {len(percents)} instances")
    if failures:
        print(f"{failures} instance(s) failed", file=sys.stderr)
        return 1
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    try:
        events = read_events(args.log)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.what == "trajectory":
        text = render_csv(
            export_trajectory(events), ["generation", "best_fitness", "tokens_used"]
        )
    elif args.what == "turns":
        text = render_csv(export_turns(events), ["turn", "decision", "count"])
    else:
        text = render_csv(
            export_groups(events), ["generation", "provenance", "cluster", "members"]
        )
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_baselines(args: argparse.Namespace) -> int:
    instances = _ensure_references(_build_instances(args))
    if args.problem == "bpp":
        print(f"{'heuristic':<18}{'mean excess bins':>18}")
        for spec in registered_builtins("bpp"):
            candidate = make_candidate(BuiltinBody(spec.name), Origin.INIT)
            factory = ExecutorFactory(problem="bpp", timeout=args.timeout)
            values = []
            with factory.load(candidate.body) as session:
                for inst in instances:
                    outcome = evaluate_on_instance(session, inst)
                    values.append(outcome.cost if outcome.cost is not None else math.nan)
            print(f"{spec.name:<18}{statistics.fmean(values):>17.2f}%")
    else:
        print(f"{'heuristic':<22}{'mean optimality gap':>20}")
        rows = []
        nn_gaps, opt_gaps = [], []
        for inst in instances:
            nn_len = tour_length(nearest_neighbour(inst, 0), inst)
            improved = tour_length(two_opt(nearest_neighbour(inst, 0), inst), inst)
            nn_gaps.append((nn_len / inst.reference_cost - 1.0) * 100.0)
            opt_gaps.append((improved / inst.reference_cost - 1.0) * 100.0)
        rows.append(("nearest_neighbour", statistics.fmean(nn_gaps)))
        rows.append(("nearest_neighbour+2opt", statistics.fmean(opt_gaps)))
        for name, value in rows:
            print(f"{name:<22}{value:>19.2f}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evoheur",
        description="Evolve combinatorial-optimization heuristics with an LLM in the loop.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a full evolutionary run")
    p_run.add_argument("--config", required=True, help="TOML config file")
    p_run.add_argument(
        "--set",
        action="append",
        type=_parse_override,
        metavar="KEY=VALUE",
        help="override a config field (repeatable)",
    )
    p_run.add_argument("--log", default="evoheur_run.jsonl", help="run log path")
    p_run.add_argument(
        "--checkpoint",
        help="snapshot file written each generation; resumes if it already exists",
    )
    p_run.set_defaults(func=cmd_run)

    def add_instance_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--problem", choices=["bpp", "tsp"], default="bpp")
        p.add_argument("--instance", action="append", help="instance JSON file (repeatable)")
        p.add_argument("--count", type=int, default=5)
        p.add_argument("--seed", type=int, default=2024)
        p.add_argument("--capacity", type=int, default=100)
        p.add_argument("--num-items", type=int, default=1000)
        p.add_argument("--nodes", type=int, default=50)
        p.add_argument("--timeout", type=float, default=70.0)

    p_eval = sub.add_parser("eval", help="evaluate one candidate on an instance set")
    p_eval.add_argument("candidate", help="builtin:<name> or path to a source file")
    add_instance_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_export = sub.add_parser("export", help="export run-log tables as CSV")
    p_export.add_argument("log", help="run log (JSONL)")
    p_export.add_argument(
        "--what", choices=["trajectory", "turns", "groups"], default="trajectory"
    )
    p_export.add_argument("--out", help="output CSV path (default: stdout)")
    p_export.set_defaults(func=cmd_export)

    p_base = sub.add_parser("baselines", help="print the classical-baseline table")
    add_instance_flags(p_base)
    p_base.set_defaults(func=cmd_baselines)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
