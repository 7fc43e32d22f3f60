"""Task runtime.

One ``TaskRunner`` owns a single task run: it asks the backend for an initial
plan (with a retrieved workflow as an in-context reference when planning
exploitation is on), walks the leaves depth-first, serves each leaf either by
executing a retrieved pipeline automaton or by a step-wise ReACT loop, splits
or extends the plan when a leaf fails, and, in training mode, consolidates
and stores what the run learned.

A leaf counts as completed only when its run ended explicitly (terminate
signal or the automaton's End node) and its milestones hold.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable

from .consolidate import (
    consolidate_pipeline,
    consolidate_workflows,
    extract_json_document,
    workflow_to_dict,
)
from .env import SimulatedEnvironment, build_environment, evaluate_milestones
from .errors import (
    BackendError,
    IceError,
    PipelineRunFailed,
    PlanParseError,
    RectifyParseError,
    StepParseError,
    TaskAborted,
    UnknownTool,
)
from .llm import CallTag, CompletionRequest, LlmBackend, Message, Role, counters_delta
from .memory import (
    ExperienceMemory,
    MemoryRecord,
    RecordKind,
    pipeline_key,
    workflow_key,
)
from .pipeline import (
    NodeType,
    PipelineAutomaton,
    pipeline_from_dict,
    pipeline_to_dict,
    validate_pipeline,
)
from .plan import Goal, GoalId, GoalStatus, PlanTree, RectificationKind, new_plan
from .trajectory import (
    Step,
    StepOutcome,
    Trajectory,
    TrajectoryStatus,
    investigate_trajectories,
)

__all__ = [
    "RunMode",
    "RunConfig",
    "ExecutionMethod",
    "SubgoalOutcome",
    "TaskSpec",
    "TaskRunReport",
    "TaskRunner",
    "run_task",
    "MAX_RECTIFICATIONS_PER_GOAL",
]

#: After this many rectification attempts a failed goal is abandoned.
MAX_RECTIFICATIONS_PER_GOAL = 2

#: Hard cap on rectification rounds across a whole task run. Per-goal budgets
#: alone cannot bound a run: every rectification may introduce fresh goals
#: with fresh budgets, so a backend that keeps splitting would grow the tree
#: forever.
MAX_RECTIFICATIONS_PER_TASK = 12


class RunMode(str, Enum):
    TRAIN = "train"
    EXPLOIT = "exploit"


class ExecutionMethod(str, Enum):
    PIPELINE = "pipeline"
    REACT = "react"


@dataclass
class RunConfig:
    planning_ice: bool = False
    execution_ice: bool = False
    mode: RunMode = RunMode.EXPLOIT
    pipeline_threshold: float = 0.85
    workflow_threshold: float = 0.85
    max_react_steps: int = 8
    repair_limit: int = 3
    seed: int = 0
    workflow_for_rectified_failures: bool = False

    def __post_init__(self) -> None:
        for name in ("pipeline_threshold", "workflow_threshold"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.max_react_steps < 1:
            raise ValueError("max_react_steps must be positive")
        if self.repair_limit < 1:
            raise ValueError("repair_limit must be positive")


@dataclass
class SubgoalOutcome:
    goal_id: GoalId
    method: ExecutionMethod
    trajectory: Trajectory | None
    pipeline_used: str | None
    success: bool

    def __post_init__(self) -> None:
        if self.method is ExecutionMethod.PIPELINE and self.pipeline_used is None:
            raise ValueError("pipeline outcomes must name the pipeline used")

    def to_dict(self) -> dict[str, Any]:
        return {
            "goal_id": self.goal_id.render(),
            "method": self.method.value,
            "pipeline_used": self.pipeline_used,
            "success": self.success,
            "trajectory": self.trajectory.to_dict() if self.trajectory else None,
        }


@dataclass
class TaskSpec:
    """One task file: an id, the user goal, environment fixtures, and optional
    per-subgoal milestone overrides keyed by subgoal description."""

    task_id: str
    goal: str
    env_setup: list[dict[str, Any]] = field(default_factory=list)
    milestones: dict[str, list[str]] = field(default_factory=dict)
    base_dir: Path | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "TaskSpec":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(
            task_id=doc["id"],
            goal=doc["goal"],
            env_setup=list(doc.get("env_setup", [])),
            milestones={k: list(v) for k, v in doc.get("milestones", {}).items()},
            base_dir=path.parent,
        )


@dataclass
class TaskRunReport:
    task_id: str
    plan: PlanTree
    outcomes: list[SubgoalOutcome]
    counters: dict[str, Any]
    rectifications: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "plan": self.plan.to_dict(),
            "outcomes": [o.to_dict() for o in self.outcomes],
            "counters": self.counters,
            "rectifications": self.rectifications,
        }


# -- prompt rendering ----------------------------------------------------------

PLANNING_SYSTEM = (
    "You are the planner of a tool-using agent. Decompose the goal into a short "
    "ordered list of concrete subgoals that tools can accomplish. Reply with JSON "
    'of the form {"subgoals": [{"description": "...", "milestones": ["..."]}]} '
    "and nothing else."
)

RECTIFY_SYSTEM = (
    "You repair the plan of a tool-using agent after a subgoal failed its "
    "milestones. Either split the failed subgoal into smaller child subgoals or "
    "add new sibling subgoals after an existing one. Reply with JSON of the form "
    '{"actions": [{"kind": "split", "target": "<goal id>", "subgoals": '
    '[{"description": "...", "milestones": ["..."]}]}, {"kind": "add", "after": '
    '"<goal id>", "subgoals": [...]}]} and nothing else.'
)

REACT_SYSTEM = (
    "You operate tools step by step to finish one subgoal. Reply with JSON: "
    'either {"thought": "...", "tool_name": "...", "tool_args": {...}} to invoke '
    'a tool, or {"thought": "...", "terminate": true} once the subgoal is complete.'
)

PIPELINE_PARAM_SYSTEM = (
    "You fill in the arguments for the next tool call of a stored pipeline. "
    "Reply with one JSON object holding exactly the tool arguments."
)

PIPELINE_CHOICE_SYSTEM = (
    "You choose which outgoing edge of a stored pipeline to follow next, "
    "guided by the edge comments. Reply with the edge_name of exactly one "
    "offered edge."
)

MILESTONE_SYSTEM = (
    "Judge whether every milestone of the subgoal holds given the recorded tool "
    "outputs. Reply with yes or no."
)


def _render_workflow_reference(title: str, hit: tuple[MemoryRecord, float]) -> str:
    record, _ = hit
    payload = record.payload
    lines = [f"{title} (similar past goal: {payload['source_description']}):"]
    for i, entry in enumerate(payload.get("entries", []), start=1):
        milestones = "; ".join(entry.get("milestones", [])) or "none"
        lines.append(f"  {i}. {entry['description']} | milestones: {milestones}")
    return "\n".join(lines)


def render_plan_prompt(goal: str, reference: tuple[MemoryRecord, float] | None) -> str:
    if reference is None:
        return f"Goal: {goal}\nNo reference workflow available."
    return f"Goal: {goal}\n" + _render_workflow_reference("Reference workflow", reference)


def render_react_prompt(goal: Goal, traj: Trajectory) -> str:
    lines = [
        f"Subgoal: {goal.description}",
        f"Completed steps: {len(traj.steps)}",
        f"Milestones: {'; '.join(goal.milestones) or 'none'}",
    ]
    for step in traj.steps:
        args = json.dumps(step.tool_args, ensure_ascii=False)
        lines.append(
            f"Step {step.index}: {step.tool_name}({args}) -> "
            f"[{step.outcome.value}] {step.tool_output}"
        )
    return "\n".join(lines)


# -- reply parsing ---------------------------------------------------------------


def parse_plan_reply(text: str) -> list[tuple[str, list[str]]]:
    doc = extract_json_document(text)
    subgoals = doc.get("subgoals")
    if not isinstance(subgoals, list):
        raise ValueError('the reply needs a "subgoals" list')
    parsed = []
    for item in subgoals:
        if not isinstance(item, dict) or not isinstance(item.get("description"), str):
            raise ValueError("every subgoal needs a string description")
        milestones = item.get("milestones", [])
        if not isinstance(milestones, list) or any(
            not isinstance(m, str) for m in milestones
        ):
            raise ValueError("milestones must be a list of strings")
        parsed.append((item["description"], list(milestones)))
    return parsed


@dataclass(frozen=True)
class RectifyAction:
    kind: RectificationKind
    anchor: GoalId  # split target, or the goal the additions follow
    subgoals: tuple[tuple[str, list[str]], ...]


def parse_rectify_reply(text: str) -> list[RectifyAction]:
    doc = extract_json_document(text)
    raw_actions = doc.get("actions")
    if not isinstance(raw_actions, list) or not raw_actions:
        raise ValueError('the reply needs a non-empty "actions" list')
    actions = []
    for raw in raw_actions:
        kind = raw.get("kind")
        if kind == "split":
            anchor = raw.get("target")
        elif kind == "add":
            anchor = raw.get("after")
        else:
            raise ValueError(f"unknown action kind {kind!r}")
        if not isinstance(anchor, str):
            raise ValueError("actions must name a goal id")
        subgoals = raw.get("subgoals")
        if not isinstance(subgoals, list) or not subgoals:
            raise ValueError("actions need a non-empty subgoals list")
        parsed = []
        for item in subgoals:
            if not isinstance(item, dict) or not isinstance(item.get("description"), str):
                raise ValueError("every subgoal needs a string description")
            parsed.append((item["description"], list(item.get("milestones", []))))
        actions.append(
            RectifyAction(
                kind=RectificationKind(kind),
                anchor=GoalId.parse(anchor),
                subgoals=tuple(parsed),
            )
        )
    return actions


@dataclass(frozen=True)
class ReactAction:
    thought: str
    terminate: bool
    tool_name: str = ""
    tool_args: dict[str, Any] = field(default_factory=dict)


def parse_react_reply(text: str) -> ReactAction:
    doc = extract_json_document(text)
    thought = doc.get("thought", "")
    if doc.get("terminate") is True:
        return ReactAction(thought=thought, terminate=True)
    tool_name = doc.get("tool_name")
    tool_args = doc.get("tool_args", {})
    if not isinstance(tool_name, str) or not tool_name:
        raise ValueError("the reply needs a tool_name or terminate=true")
    if not isinstance(tool_args, dict):
        raise ValueError("tool_args must be an object")
    return ReactAction(
        thought=thought, terminate=False, tool_name=tool_name, tool_args=tool_args
    )


# -- the runner ------------------------------------------------------------------


class TaskRunner:
    """Executes one task end to end against a memory, backend, and environment."""

    def __init__(
        self,
        task: TaskSpec,
        memory: ExperienceMemory,
        backend: LlmBackend,
        config: RunConfig,
        environment: SimulatedEnvironment | None = None,
    ) -> None:
        self.task = task
        self.memory = memory
        self.backend = backend
        self.config = config
        self.environment = environment or build_environment(
            task.env_setup, task.base_dir
        )
        self.tree: PlanTree | None = None
        self.outcomes: list[SubgoalOutcome] = []
        self.trajectories: dict[str, Trajectory] = {}
        self._achieved: dict[str, bool] = {}
        self._rectify_attempts: dict[str, int] = {}
        self._total_rectifications = 0

    # -- backend plumbing ---------------------------------------------------

    def _complete_parsed(
        self,
        system: str,
        user: str,
        tag: CallTag,
        parser: Callable[[str], Any],
        error: type[Exception],
    ) -> Any:
        """Call the backend and parse; re-prompt with the parse error appended
        up to the repair limit, then raise ``error``."""
        messages: list[Message] = [Message(Role.USER, user)]
        last: Exception | None = None
        for _ in range(self.config.repair_limit + 1):
            reply = self.backend.complete(
                CompletionRequest(system, tuple(messages), tag)
            )
            try:
                return parser(reply)
            except ValueError as exc:
                last = exc
                messages.append(Message(Role.ASSISTANT, reply))
                messages.append(
                    Message(
                        Role.USER,
                        f"Could not apply that reply: {exc}. "
                        "Reply again with valid JSON.",
                    )
                )
        raise error(f"repair limit exhausted: {last}")

    # -- planning -----------------------------------------------------------

    def generate_initial_plan(self) -> PlanTree:
        reference = None
        if self.config.planning_ice:
            reference = self.memory.retrieve(
                RecordKind.WORKFLOW, self.task.goal, self.config.workflow_threshold
            )
        user = render_plan_prompt(self.task.goal, reference)
        subgoals = self._complete_parsed(
            PLANNING_SYSTEM, user, CallTag.PLANNING, parse_plan_reply, PlanParseError
        )
        self.tree = new_plan(self.task.goal, subgoals)
        return self.tree

    def rectify_plan(self, failed: GoalId) -> PlanTree:
        assert self.tree is not None
        goal = self.tree.find(failed)
        if failed.is_root:
            raise ValueError("the root goal cannot be rectified")
        if goal.status is not GoalStatus.FAILURE:
            raise ValueError("only failed goals are rectified")
        parent = self.tree.parent_of(failed)

        sections = [
            f"Failed subgoal: {goal.description}",
            f"Goal id: {failed.render()}",
            f"Parent goal: {parent.description}",
        ]
        if self.config.planning_ice:
            for title, query in (
                ("Reference workflow for the failed subgoal", goal.description),
                ("Reference workflow for the parent goal", parent.description),
            ):
                hit = self.memory.retrieve(
                    RecordKind.WORKFLOW, query, self.config.workflow_threshold
                )
                if hit is not None:
                    sections.append(_render_workflow_reference(title, hit))
        if len(sections) == 3:
            sections.append("No reference workflows available.")

        def apply_actions(tree: PlanTree, actions: list[RectifyAction]) -> None:
            for action in actions:
                if action.kind is RectificationKind.SPLIT:
                    tree.split_goal(action.anchor, list(action.subgoals))
                else:
                    anchor = action.anchor
                    for subgoal in action.subgoals:
                        tree.add_goal(anchor, subgoal)
                        anchor = tree.log[-1].introduced[0]

        def parse_and_stage(text: str) -> list[RectifyAction]:
            actions = parse_rectify_reply(text)
            # dry-run on a copy so a half-applicable reply cannot corrupt the
            # live tree before the repair re-prompt
            try:
                apply_actions(copy.deepcopy(self.tree), actions)
            except IceError as exc:
                raise ValueError(str(exc)) from exc
            return actions

        actions = self._complete_parsed(
            RECTIFY_SYSTEM,
            "\n".join(sections),
            CallTag.PLANNING,
            parse_and_stage,
            RectifyParseError,
        )
        apply_actions(self.tree, actions)
        return self.tree

    # -- milestone judging ----------------------------------------------------

    def _goal_milestones(self, goal: Goal) -> list[str]:
        override = self.task.milestones.get(goal.description)
        return list(override) if override is not None else list(goal.milestones)

    def _milestones_hold(self, goal: Goal, traj: Trajectory) -> bool:
        milestones = self._goal_milestones(goal)
        if self.environment is not None:
            return evaluate_milestones(milestones, self.environment)
        # live mode: one backend call, never counted as tool handling
        outputs = "\n".join(s.tool_output for s in traj.steps) or "none"
        user = (
            f"Subgoal: {goal.description}\n"
            f"Milestones: {'; '.join(milestones) or 'none'}\n"
            f"Outputs:\n{outputs}"
        )
        reply = self.backend.complete(
            CompletionRequest(MILESTONE_SYSTEM, (Message(Role.USER, user),), CallTag.OTHER)
        )
        return reply.strip().lower().startswith("yes")

    # -- execution ------------------------------------------------------------

    def handle_subgoal(self, goal: Goal) -> SubgoalOutcome:
        """Serve one leaf: a retrieved pipeline when execution exploitation is
        on and similarity clears the threshold, otherwise a ReACT loop. A
        pipeline that fails mid-run falls back to a fresh ReACT attempt for
        the whole subgoal; calls from both attempts stay counted."""
        if self.config.execution_ice:
            key = pipeline_key(goal.description, self._goal_milestones(goal))
            hit = self.memory.retrieve(
                RecordKind.PIPELINE, key, self.config.pipeline_threshold
            )
            if hit is not None:
                pipeline = pipeline_from_dict(hit[0].payload)
                try:
                    traj, ok = self.run_pipeline(pipeline, goal)
                    return SubgoalOutcome(
                        goal_id=goal.id,
                        method=ExecutionMethod.PIPELINE,
                        trajectory=traj,
                        pipeline_used=pipeline.pipeline_name,
                        success=ok,
                    )
                except PipelineRunFailed:
                    pass
        traj = self.react_loop(goal)
        return SubgoalOutcome(
            goal_id=goal.id,
            method=ExecutionMethod.REACT,
            trajectory=traj,
            pipeline_used=None,
            success=traj.final_status is TrajectoryStatus.SUCCESS,
        )

    def react_loop(self, goal: Goal) -> Trajectory:
        traj = Trajectory(goal_id=goal.id)
        terminated = False
        while len(traj.steps) < self.config.max_react_steps:
            action = self._complete_parsed(
                REACT_SYSTEM,
                render_react_prompt(goal, traj),
                CallTag.TOOL_HANDLING,
                parse_react_reply,
                StepParseError,
            )
            if action.terminate:
                terminated = True
                break
            try:
                output, outcome = self.environment.invoke(
                    action.tool_name, action.tool_args
                )
            except UnknownTool:
                output = f"tool error: unknown tool {action.tool_name}"
                outcome = StepOutcome.TOOL_ERROR
            traj.record_step(
                Step(
                    index=0,
                    thought=action.thought,
                    tool_name=action.tool_name,
                    tool_args=action.tool_args,
                    tool_output=output,
                    outcome=outcome,
                )
            )
        ok = terminated and self._milestones_hold(goal, traj)
        traj.finalize(TrajectoryStatus.SUCCESS if ok else TrajectoryStatus.FAILURE)
        return traj

    def run_pipeline(
        self, pipeline: PipelineAutomaton, goal: Goal
    ) -> tuple[Trajectory, bool]:
        """Walk the automaton from Start.

        Arriving at a tool node costs one backend call to fill the tool's
        arguments (guided by the comments of the edge just taken); leaving a
        node with several outgoing edges costs one backend call to choose an
        edge by name. The walk succeeds when it reaches End; dead ends and
        exhausted repair budgets raise ``PipelineRunFailed``.
        """
        violations = validate_pipeline(pipeline)
        if violations:
            raise PipelineRunFailed(
                "pipeline is invalid: " + "; ".join(v.render() for v in violations)
            )
        traj = Trajectory(goal_id=goal.id)
        outputs: list[str] = []
        current = pipeline.start_node()
        incoming: tuple[str, ...] = ()
        for _ in range(len(pipeline.nodes) + len(pipeline.edges) + 1):
            if current.node_type is NodeType.END:
                ok = self._milestones_hold(goal, traj)
                traj.finalize(
                    TrajectoryStatus.SUCCESS if ok else TrajectoryStatus.FAILURE
                )
                return traj, ok
            if current.node_type is NodeType.TOOL_SERVER:
                args = self._pipeline_args(pipeline, current, goal, incoming, outputs)
                try:
                    output, outcome = self.environment.invoke(current.tool_name, args)
                except UnknownTool as exc:
                    raise PipelineRunFailed(str(exc)) from exc
                traj.record_step(
                    Step(
                        index=0,
                        thought=f"pipeline {pipeline.pipeline_name}: node {current.node_name}",
                        tool_name=current.tool_name,
                        tool_args=args,
                        tool_output=output,
                        outcome=outcome,
                    )
                )
                outputs.append(output)
            out_edges = pipeline.outgoing(current.node_name)
            if not out_edges:
                raise PipelineRunFailed(f"dead end at node {current.node_name!r}")
            if len(out_edges) == 1:
                edge = out_edges[0]
            else:
                edge = self._choose_edge(pipeline, current, out_edges, outputs)
            incoming = edge.comments
            current = pipeline.node_by_name(edge.to_node)
        raise PipelineRunFailed("the walk did not terminate")  # pragma: no cover

    def _pipeline_args(
        self,
        pipeline: PipelineAutomaton,
        node,
        goal: Goal,
        incoming: tuple[str, ...],
        outputs: list[str],
    ) -> dict[str, Any]:
        prior = "\n".join(f"  {i}. {out}" for i, out in enumerate(outputs, 1)) or "  none"
        user = (
            f"Pipeline node: {pipeline.pipeline_name} / {node.node_name}\n"
            f"Subgoal: {goal.description}\n"
            f"Tool: {node.tool_name}\n"
            f"Transition notes: {'; '.join(incoming) or 'none'}\n"
            f"Prior outputs:\n{prior}"
        )

        def parse_args(text: str) -> dict[str, Any]:
            doc = extract_json_document(text)
            if not isinstance(doc, dict):
                raise ValueError("tool arguments must be a JSON object")
            return doc

        return self._complete_parsed(
            PIPELINE_PARAM_SYSTEM,
            user,
            CallTag.TOOL_HANDLING,
            parse_args,
            PipelineRunFailed,
        )

    def _choose_edge(self, pipeline, node, out_edges, outputs):
        options = "\n".join(
            f"  - {e.edge_name} (to {e.to_node}): {'; '.join(e.comments) or 'no comments'}"
            for e in out_edges
        )
        user = (
            f"Choose the next edge after node: {pipeline.pipeline_name} / {node.node_name}\n"
            f"Last output: {outputs[-1] if outputs else 'none'}\n"
            f"Options:\n{options}"
        )

        def parse_choice(text: str):
            stripped = text.strip().strip('"')
            for edge in out_edges:
                if stripped == edge.edge_name:
                    return edge
            try:
                doc = extract_json_document(text)
                named = doc.get("edge") or doc.get("edge_name")
                for edge in out_edges:
                    if edge.edge_name == named:
                        return edge
            except ValueError:
                pass
            mentioned = [e for e in out_edges if e.edge_name in text]
            if len(mentioned) == 1:
                return mentioned[0]
            raise ValueError(
                "the reply must name exactly one offered edge_name"
            )

        return self._complete_parsed(
            PIPELINE_CHOICE_SYSTEM,
            user,
            CallTag.TOOL_HANDLING,
            parse_choice,
            PipelineRunFailed,
        )

    # -- plan walking -----------------------------------------------------------

    def _run_children(self, parent: Goal) -> bool:
        # index loop: rectifications may append children while we iterate
        i = 0
        while i < len(parent.children):
            self._achieve(parent.children[i])
            i += 1
        return all(
            self._achieved.get(child.id.render(), False) for child in parent.children
        )

    def _achieve(self, goal: Goal) -> bool:
        key = goal.id.render()
        if key in self._achieved:
            return self._achieved[key]
        if goal.children:
            if goal.status is GoalStatus.PENDING:
                self.tree.set_status(goal.id, GoalStatus.IN_PROGRESS)
            ok = self._run_children(goal)
            if goal.status is GoalStatus.IN_PROGRESS:
                self.tree.set_status(
                    goal.id, GoalStatus.SUCCESS if ok else GoalStatus.FAILURE
                )
            self._achieved[key] = ok
            return ok
        return self._execute_leaf(goal)

    def _execute_leaf(self, goal: Goal) -> bool:
        key = goal.id.render()
        self.tree.set_status(goal.id, GoalStatus.IN_PROGRESS)
        outcome = self.handle_subgoal(goal)
        self.outcomes.append(outcome)
        if outcome.trajectory is not None:
            self.trajectories[key] = outcome.trajectory
        self.tree.set_status(
            goal.id, GoalStatus.SUCCESS if outcome.success else GoalStatus.FAILURE
        )
        if outcome.success:
            self._achieved[key] = True
            return True

        achieved = False
        while (
            not achieved
            and not goal.id.is_root
            and self._rectify_attempts.get(key, 0) < MAX_RECTIFICATIONS_PER_GOAL
            and self._total_rectifications < MAX_RECTIFICATIONS_PER_TASK
        ):
            self._rectify_attempts[key] = self._rectify_attempts.get(key, 0) + 1
            self._total_rectifications += 1
            logged_before = len(self.tree.log)
            try:
                self.rectify_plan(goal.id)
            except RectifyParseError:
                break
            events = self.tree.log[logged_before:]
            if not events:
                break
            if any(
                ev.kind is RectificationKind.SPLIT and ev.target == goal.id
                for ev in events
            ):
                # the fresh children now carry the work; the goal stays failed
                achieved = self._run_children(goal)
            if not achieved and any(
                ev.kind is RectificationKind.ADD for ev in events
            ):
                # bypass: new siblings continue the parent's work, so this
                # failure no longer blocks the parent (the siblings still
                # have to succeed on their own)
                achieved = True
        self._achieved[key] = achieved
        return achieved

    # -- full run -----------------------------------------------------------------

    def run(self) -> TaskRunReport:
        before = self.backend.counters.snapshot()
        try:
            self.generate_initial_plan()
            root = self.tree.root
            if root.children:
                self.tree.set_status(root.id, GoalStatus.IN_PROGRESS)
                ok = self._run_children(root)
                self.tree.set_status(
                    root.id, GoalStatus.SUCCESS if ok else GoalStatus.FAILURE
                )
                self._achieved[root.id.render()] = ok
            else:
                self._execute_leaf(root)
            if self.config.mode is RunMode.TRAIN:
                self._consolidate_and_store()
        except BackendError as exc:
            raise TaskAborted(f"backend failure: {exc}") from exc
        after = self.backend.counters.snapshot()
        return TaskRunReport(
            task_id=self.task.task_id,
            plan=self.tree,
            outcomes=self.outcomes,
            counters=counters_delta(before, after),
            rectifications=len(self.tree.log),
        )

    def _consolidate_and_store(self) -> None:
        # a goal that failed and was split is no longer a leaf; its stale
        # trajectory must not reach the leaf-only investigation
        leaf_trajectories = [
            self.trajectories[leaf.id.render()]
            for leaf in self.tree.leaves()
            if leaf.id.render() in self.trajectories
        ]
        for traj in investigate_trajectories(self.tree, leaf_trajectories):
            goal = self.tree.find(traj.goal_id)
            automaton = consolidate_pipeline(
                traj, goal, self.backend, repair_limit=self.config.repair_limit
            )
            self.memory.store(
                RecordKind.PIPELINE,
                pipeline_key(goal.description, self._goal_milestones(goal)),
                pipeline_to_dict(automaton),
            )
        for workflow in consolidate_workflows(
            self.tree,
            workflow_for_rectified_failures=self.config.workflow_for_rectified_failures,
        ):
            if workflow.entries:
                self.memory.store(
                    RecordKind.WORKFLOW,
                    workflow_key(workflow.source_description),
                    workflow_to_dict(workflow),
                )


def run_task(
    task: TaskSpec,
    memory: ExperienceMemory,
    backend: LlmBackend,
    config: RunConfig,
    environment: SimulatedEnvironment | None = None,
) -> TaskRunReport:
    return TaskRunner(task, memory, backend, config, environment).run()
