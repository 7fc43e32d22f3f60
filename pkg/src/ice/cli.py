"""Command-line entry point.

Subcommands: train, run, bench, consolidate, memory. Exit codes: 0 success,
1 usage or input error, 2 task failure, 3 backend failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import (
    BenchSpec,
    build_backend,
    compute_metrics,
    format_table,
    run_bench,
)
from .consolidate import consolidate_pipeline
from .engine import RunConfig, RunMode, TaskSpec, run_task
from .errors import (
    ArmFailed,
    BackendError,
    ConsolidationFailed,
    IceError,
    TaskAborted,
    UnknownRecord,
)
from .memory import ExperienceMemory, RecordKind
from .pipeline import dumps_pipeline, pipeline_from_dict
from .plan import Goal
from .trajectory import read_trajectory_log

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_TASK = 2
EXIT_BACKEND = 3


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", default="http",
                        help="scripted:<scenario.json> or http")
    parser.add_argument("--memory", help="memory snapshot file to load and/or save")
    parser.add_argument("--planning-ice", action=argparse.BooleanOptionalAction,
                        default=False)
    parser.add_argument("--execution-ice", action=argparse.BooleanOptionalAction,
                        default=False)
    parser.add_argument("--threshold-pipeline", type=float, default=0.85)
    parser.add_argument("--threshold-workflow", type=float, default=0.85)
    parser.add_argument("--max-react-steps", type=int, default=8)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ice",
        description="Experience-consolidating agent runtime and benchmark harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run tasks in train mode and persist memory")
    p_train.add_argument("tasks", nargs="*", help="task JSON files")
    _add_run_flags(p_train)

    p_run = sub.add_parser("run", help="run one task in exploit mode")
    p_run.add_argument("task", help="task JSON file")
    _add_run_flags(p_run)

    p_bench = sub.add_parser("bench", help="run a benchmark spec over its arms")
    p_bench.add_argument("--config", required=True, help="bench spec JSON file")
    p_bench.add_argument("--seed", type=int, help="override the spec seed")
    p_bench.add_argument("--parallel", action="store_true",
                         help="run each arm's test tasks concurrently")
    p_bench.add_argument("--out", help="output directory for reports and snapshots")

    p_cons = sub.add_parser("consolidate",
                            help="turn a trajectory log into a pipeline JSON file")
    p_cons.add_argument("log", help="trajectory log JSON file")
    p_cons.add_argument("--backend", default="http")
    p_cons.add_argument("--out", help="pipeline JSON output path")

    p_mem = sub.add_parser("memory", help="inspect a memory snapshot")
    p_mem.add_argument("subcommand", choices=["list", "show", "export"])
    p_mem.add_argument("record_id", nargs="?", type=int,
                       help="record id (for show)")
    p_mem.add_argument("--memory", required=True, help="memory snapshot file")
    p_mem.add_argument("--query", help="similarity query for list")
    p_mem.add_argument("--out", help="output directory for export")

    return parser


def _run_config(args: argparse.Namespace, mode: RunMode) -> RunConfig:
    return RunConfig(
        planning_ice=args.planning_ice,
        execution_ice=args.execution_ice,
        mode=mode,
        pipeline_threshold=args.threshold_pipeline,
        workflow_threshold=args.threshold_workflow,
        max_react_steps=args.max_react_steps,
        seed=args.seed,
    )


def _load_memory(path: str | None) -> ExperienceMemory:
    if path and Path(path).exists():
        return ExperienceMemory.load(path)
    return ExperienceMemory()


def cmd_train(args: argparse.Namespace) -> int:
    backend = build_backend(args.backend)
    memory = _load_memory(args.memory)
    config = _run_config(args, RunMode.TRAIN)
    reports = []
    failures = []
    for path in args.tasks:
        task = TaskSpec.from_file(path)
        try:
            reports.append(run_task(task, memory, backend, config))
        except IceError as exc:
            failures.append({"task_id": task.task_id, "error": str(exc)})
            print(f"task {task.task_id} failed: {exc}", file=sys.stderr)
    if args.memory:
        memory.save(args.memory)
    doc = {
        "reports": [r.to_dict() for r in reports],
        "failures": failures,
        "memory_records": len(memory),
    }
    _write_or_print(args.out, json.dumps(doc, indent=2, ensure_ascii=False) + "\n")
    if any(isinstance(f.get("error"), str) and "backend" in f["error"].lower()
           for f in failures):
        return EXIT_BACKEND
    return EXIT_TASK if failures else EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    backend = build_backend(args.backend)
    memory = _load_memory(args.memory)
    config = _run_config(args, RunMode.EXPLOIT)
    task = TaskSpec.from_file(args.task)
    try:
        report = run_task(task, memory, backend, config)
    except TaskAborted as exc:
        print(f"task aborted: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    _write_or_print(args.out, json.dumps(report.to_dict(), indent=2,
                                         ensure_ascii=False) + "\n")
    metrics = compute_metrics([report], include_reutilization=args.execution_ice)
    print(f"completion {metrics.completion_rate_pct:.2f}% | "
          f"calls {metrics.api_calls_all} | "
          f"rectifications {metrics.rectification_times}", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    spec = BenchSpec.from_file(args.config)
    if args.seed is not None:
        spec.seed = args.seed
    if args.parallel:
        spec.parallel = True
    result = run_bench(spec)
    table = format_table(result)
    print(table, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench_report.json").write_text(result.to_json(), encoding="utf-8")
        (out / "bench_table.txt").write_text(table, encoding="utf-8")
        for arm in result.arms:
            snapshot = json.dumps(arm.memory_snapshot, indent=2,
                                  ensure_ascii=False) + "\n"
            (out / f"memory_{arm.arm.name}.json").write_text(snapshot,
                                                             encoding="utf-8")
    if result.failures:
        for failure in result.failures:
            print(f"arm {failure['arm']} failed: {failure['error']}",
                  file=sys.stderr)
        return EXIT_BACKEND
    return EXIT_OK


def cmd_consolidate(args: argparse.Namespace) -> int:
    try:
        traj, description = read_trajectory_log(args.log)
    except json.JSONDecodeError as exc:
        print(f"malformed trajectory log: line {exc.lineno}: {exc.msg}",
              file=sys.stderr)
        return EXIT_USAGE
    backend = build_backend(args.backend)
    goal = Goal(id=traj.goal_id, description=description)
    pipeline = consolidate_pipeline(traj, goal, backend)
    _write_or_print(args.out, dumps_pipeline(pipeline))
    return EXIT_OK


def cmd_memory(args: argparse.Namespace) -> int:
    memory = ExperienceMemory.load(args.memory)
    if args.subcommand == "list":
        query = memory.embed(args.query) if args.query else None
        for record in memory.records():
            line = f"{record.record_id:>4}  {record.kind.value:<9} {record.key_text.splitlines()[0]}"
            if query is not None:
                line += f"  sim={query.cosine(record.embedding):.4f}"
            print(line)
        return EXIT_OK
    if args.subcommand == "show":
        if args.record_id is None:
            print("show needs a record id", file=sys.stderr)
            return EXIT_USAGE
        record = memory.get(args.record_id)
        if record.kind is RecordKind.PIPELINE:
            print(dumps_pipeline(pipeline_from_dict(record.payload)), end="")
        else:
            print(json.dumps(record.payload, indent=2, ensure_ascii=False))
        return EXIT_OK
    # export
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    for record in memory.records(RecordKind.PIPELINE):
        path = out / f"pipeline_{record.record_id}.json"
        path.write_text(dumps_pipeline(pipeline_from_dict(record.payload)),
                        encoding="utf-8")
        print(path)
    return EXIT_OK


def _write_or_print(out: str | None, text: str) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        print(text, end="")


_HANDLERS = {
    "train": cmd_train,
    "run": cmd_run,
    "bench": cmd_bench,
    "consolidate": cmd_consolidate,
    "memory": cmd_memory,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return _HANDLERS[args.command](args)
    except (BackendError, ConsolidationFailed, TaskAborted, ArmFailed) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (UnknownRecord, FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TASK


def entrypoint() -> None:  # console_scripts target
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
