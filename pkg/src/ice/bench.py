"""Benchmark harness: training runs, measured arms, and metric reports.

An arm is one configuration (planning exploitation on/off, execution
exploitation on/off). Arms that exploit experience first run the training
tasks in train mode against a fresh memory; counters are then reset and only
the test phase is measured, so the reported call counts describe how the arm
performs once its memory is populated.

Metrics follow the same definitions everywhere:

* api_calls_all      - every backend completion during the test phase
* api_calls_tools    - the tool-handling share of those calls
* completion_rate    - percent of executed leaf subgoals that ended
                       explicitly with success and passed their milestones
* rectification_times- total logged plan edits
* re-utilization     - percent of executed leaves served by a pipeline
                       (reported only for arms with execution exploitation)
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .engine import (
    ExecutionMethod,
    RunConfig,
    RunMode,
    TaskRunReport,
    TaskSpec,
    run_task,
)
from .errors import ArmFailed, IceError
from .llm import (
    CallTag,
    CompletionRequest,
    HttpChatBackend,
    LlmBackend,
    ScriptedBackend,
    ScriptedScenario,
)
from .memory import ExperienceMemory

__all__ = [
    "MetricsReport",
    "ArmSpec",
    "BenchSpec",
    "ArmResult",
    "BenchResult",
    "compute_metrics",
    "run_training",
    "run_bench",
    "build_backend",
    "format_table",
]


@dataclass
class MetricsReport:
    api_calls_all: int
    api_calls_tools: int
    completion_rate_pct: float
    rectification_times: int
    reutilization_rate_pct: float | None

    def __post_init__(self) -> None:
        if self.api_calls_tools > self.api_calls_all:
            raise ValueError("tool calls cannot exceed total calls")
        rates = [self.completion_rate_pct]
        if self.reutilization_rate_pct is not None:
            rates.append(self.reutilization_rate_pct)
        if any(not 0.0 <= r <= 100.0 for r in rates):
            raise ValueError("rates are percentages in [0, 100]")

    def to_dict(self) -> dict[str, Any]:
        return {
            "api_calls_all": self.api_calls_all,
            "api_calls_tools": self.api_calls_tools,
            "completion_rate_pct": self.completion_rate_pct,
            "rectification_times": self.rectification_times,
            "reutilization_rate_pct": self.reutilization_rate_pct,
        }


@dataclass(frozen=True)
class ArmSpec:
    name: str
    planning_ice: bool = False
    execution_ice: bool = False
    train_limit: int | None = None  # cap on training tasks; None means all
    backend: str | None = None  # per-arm override of the bench backend

    @property
    def uses_ice(self) -> bool:
        return self.planning_ice or self.execution_ice


@dataclass
class BenchSpec:
    train_tasks: list[Path]
    test_tasks: list[Path]
    arms: list[ArmSpec]
    backend: str
    seed: int = 0
    pipeline_threshold: float = 0.85
    workflow_threshold: float = 0.85
    max_react_steps: int = 8
    parallel: bool = False  # run each arm's test tasks concurrently
    base_dir: Path | None = None  # scripted scenario paths resolve against this

    def __post_init__(self) -> None:
        if not self.arms:
            raise ValueError("a bench spec needs at least one arm")

    @classmethod
    def from_file(cls, path: str | Path) -> "BenchSpec":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        base = path.parent
        return cls(
            train_tasks=[base / p for p in doc.get("train_tasks", [])],
            test_tasks=[base / p for p in doc.get("test_tasks", [])],
            arms=[
                ArmSpec(
                    name=a["name"],
                    planning_ice=bool(a.get("planning_ice", False)),
                    execution_ice=bool(a.get("execution_ice", False)),
                    train_limit=a.get("train_limit"),
                    backend=a.get("backend"),
                )
                for a in doc["arms"]
            ],
            backend=doc["backend"],
            seed=int(doc.get("seed", 0)),
            pipeline_threshold=float(doc.get("pipeline_threshold", 0.85)),
            workflow_threshold=float(doc.get("workflow_threshold", 0.85)),
            max_react_steps=int(doc.get("max_react_steps", 8)),
            parallel=bool(doc.get("parallel", False)),
            base_dir=base,
        )


@dataclass
class ArmResult:
    arm: ArmSpec
    metrics: MetricsReport
    train_reports: list[TaskRunReport] = field(default_factory=list)
    test_reports: list[TaskRunReport] = field(default_factory=list)
    memory_snapshot: dict[str, Any] = field(default_factory=dict)
    memory_reads: int = 0
    memory_writes: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "arm": {
                "name": self.arm.name,
                "planning_ice": self.arm.planning_ice,
                "execution_ice": self.arm.execution_ice,
                "train_limit": self.arm.train_limit,
            },
            "metrics": self.metrics.to_dict(),
            "memory_reads": self.memory_reads,
            "memory_writes": self.memory_writes,
            "train_reports": [r.to_dict() for r in self.train_reports],
            "test_reports": [r.to_dict() for r in self.test_reports],
        }


@dataclass
class BenchResult:
    seed: int
    arms: list[ArmResult]
    failures: list[dict[str, str]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "arms": [a.to_dict() for a in self.arms],
            "failures": self.failures,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


def compute_metrics(
    reports: list[TaskRunReport], include_reutilization: bool
) -> MetricsReport:
    """Recompute every metric from raw task reports alone."""
    api_all = sum(r.counters["all"] for r in reports)
    api_tools = sum(r.counters["by_tag"][CallTag.TOOL_HANDLING.value] for r in reports)
    outcomes = [o for r in reports for o in r.outcomes]
    completed = sum(1 for o in outcomes if o.success)
    completion = 100.0 * completed / len(outcomes) if outcomes else 0.0
    rectifications = sum(r.rectifications for r in reports)
    reutilization = None
    if include_reutilization:
        piped = sum(1 for o in outcomes if o.method is ExecutionMethod.PIPELINE)
        reutilization = 100.0 * piped / len(outcomes) if outcomes else 0.0
    return MetricsReport(
        api_calls_all=api_all,
        api_calls_tools=api_tools,
        completion_rate_pct=completion,
        rectification_times=rectifications,
        reutilization_rate_pct=reutilization,
    )


class _CountingHandle(LlmBackend):
    """Per-task view of a shared backend.

    The handle's own counters see only this task's calls, so per-task report
    deltas stay exact even when tasks run concurrently; the shared backend
    keeps counting the arm-wide totals."""

    def __init__(self, inner: LlmBackend) -> None:
        super().__init__()
        self._inner = inner

    def _complete(self, request: CompletionRequest) -> str:
        return self._inner.complete(request)


def build_backend(spec: str, base_dir: Path | None = None) -> LlmBackend:
    """Backend selector for CLI strings: ``scripted:<file>`` or ``http``."""
    if spec.startswith("scripted:"):
        path = Path(spec.split(":", 1)[1])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return ScriptedBackend(ScriptedScenario.from_file(str(path)))
    if spec == "http":
        return HttpChatBackend()
    raise ValueError(f"unknown backend spec {spec!r}; use scripted:<file> or http")


def run_training(
    task_paths: list[Path],
    memory: ExperienceMemory,
    backend: LlmBackend,
    config: RunConfig,
) -> list[TaskRunReport]:
    """Run tasks in train mode, collecting per-task reports; failures are
    recorded per task and do not stop the run."""
    reports = []
    for path in task_paths:
        task = TaskSpec.from_file(path)
        reports.append(run_task(task, memory, backend, config))
    return reports


def _verify_identities(metrics: MetricsReport, reports: list[TaskRunReport]) -> None:
    recomputed = compute_metrics(reports, metrics.reutilization_rate_pct is not None)
    if recomputed != metrics:
        raise ArmFailed("metric cross-check failed: reports disagree with counters")
    for report in reports:
        by_tag = report.counters["by_tag"]
        if report.counters["all"] != sum(by_tag.values()):
            raise ArmFailed(f"counter identity broken in task {report.task_id}")


def run_arm(spec: BenchSpec, arm: ArmSpec) -> ArmResult:
    backend = build_backend(arm.backend or spec.backend, base_dir=spec.base_dir)
    memory = ExperienceMemory()
    train_config = RunConfig(
        planning_ice=False,
        execution_ice=False,
        mode=RunMode.TRAIN,
        pipeline_threshold=spec.pipeline_threshold,
        workflow_threshold=spec.workflow_threshold,
        max_react_steps=spec.max_react_steps,
        seed=spec.seed,
    )
    test_config = RunConfig(
        planning_ice=arm.planning_ice,
        execution_ice=arm.execution_ice,
        mode=RunMode.EXPLOIT,
        pipeline_threshold=spec.pipeline_threshold,
        workflow_threshold=spec.workflow_threshold,
        max_react_steps=spec.max_react_steps,
        seed=spec.seed,
    )

    if arm.uses_ice:
        limit = arm.train_limit if arm.train_limit is not None else len(spec.train_tasks)
        train_paths = spec.train_tasks[:limit]
    else:
        train_paths = []
    train_reports = run_training(train_paths, memory, backend, train_config)

    backend.reset_counters()

    def run_test(path: Path) -> TaskRunReport:
        # a fresh handle per task keeps the report's counters exact
        return run_task(TaskSpec.from_file(path), memory,
                        _CountingHandle(backend), test_config)

    if spec.parallel and len(spec.test_tasks) > 1:
        # deterministic as long as the scenario rules consumed here are
        # use-unlimited; reports keep the spec's task order
        with ThreadPoolExecutor(max_workers=min(4, len(spec.test_tasks))) as pool:
            test_reports = list(pool.map(run_test, spec.test_tasks))
    else:
        test_reports = [run_test(path) for path in spec.test_tasks]

    metrics = compute_metrics(test_reports, include_reutilization=arm.execution_ice)
    # the backend's own totals must agree with the summed per-task deltas
    totals = backend.counters.snapshot()
    if totals["all"] != metrics.api_calls_all or (
        totals["by_tag"][CallTag.TOOL_HANDLING.value] != metrics.api_calls_tools
    ):
        raise ArmFailed(f"arm {arm.name}: counter totals disagree with task reports")
    _verify_identities(metrics, test_reports)

    return ArmResult(
        arm=arm,
        metrics=metrics,
        train_reports=train_reports,
        test_reports=test_reports,
        memory_snapshot=memory.to_dict(),
        memory_reads=memory.stats.reads,
        memory_writes=memory.stats.writes,
    )


def run_bench(spec: BenchSpec) -> BenchResult:
    """Run every arm; a failing arm is recorded and the rest still run."""
    result = BenchResult(seed=spec.seed, arms=[])
    for arm in spec.arms:
        try:
            result.arms.append(run_arm(spec, arm))
        except (IceError, OSError, ValueError) as exc:
            result.failures.append({"arm": arm.name, "error": str(exc)})
    return result


_COLUMNS = [
    ("Arm", lambda r: r.arm.name),
    ("API Calls (All)", lambda r: str(r.metrics.api_calls_all)),
    ("API Calls (Tools)", lambda r: str(r.metrics.api_calls_tools)),
    ("Completion Rate (%)", lambda r: f"{r.metrics.completion_rate_pct:.2f}"),
    ("Rectification Times", lambda r: str(r.metrics.rectification_times)),
    (
        "Re-utilization Rate (%)",
        lambda r: "-"
        if r.metrics.reutilization_rate_pct is None
        else f"{r.metrics.reutilization_rate_pct:.2f}",
    ),
]


def format_table(result: BenchResult) -> str:
    rows = [[header for header, _ in _COLUMNS]]
    rows.extend([render(arm) for _, render in _COLUMNS] for arm in result.arms)
    widths = [max(len(row[i]) for row in rows) for i in range(len(_COLUMNS))]
    lines = []
    for row in rows:
        cells = [row[0].ljust(widths[0])]
        cells.extend(cell.rjust(widths[i]) for i, cell in enumerate(row) if i > 0)
        lines.append("  ".join(cells).rstrip())
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
