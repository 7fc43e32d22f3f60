"""Deterministic simulated tool environment.

Tools are named functions over an in-memory world state (files, datasets, an
append-only invocation log). Behavior is a pure function of fixtures and the
invocation sequence: no clock, no randomness, no network. Milestone
predicates evaluate against the world state alone.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable

from .errors import BadPredicate, UnknownTool
from .trajectory import StepOutcome

__all__ = [
    "ToolFailure",
    "ToolSpec",
    "InvocationRecord",
    "WorldState",
    "SimulatedEnvironment",
    "MilestoneKind",
    "MilestonePredicate",
    "parse_predicate",
    "evaluate_milestones",
    "builtin_toolkit",
    "build_environment",
]


class ToolFailure(Exception):
    """Raised inside a tool behavior; recorded as a tool-error step, never
    propagated to callers."""


@dataclass
class InvocationRecord:
    tool: str
    args: dict[str, Any]
    outcome: StepOutcome


@dataclass
class WorldState:
    files: dict[str, str] = field(default_factory=dict)
    datasets: dict[str, Any] = field(default_factory=dict)
    invocation_log: list[InvocationRecord] = field(default_factory=list)

    def digest(self) -> str:
        """Stable hash of the full state, for replay-determinism checks."""
        doc = {
            "files": dict(sorted(self.files.items())),
            "datasets": self.datasets,
            "invocation_log": [
                {"tool": r.tool, "args": r.args, "outcome": r.outcome.value}
                for r in self.invocation_log
            ],
        }
        blob = json.dumps(doc, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


Behavior = Callable[[dict[str, Any], WorldState], str]

_ARG_TYPES: dict[str, type | tuple[type, ...]] = {
    "str": str,
    "int": int,
    "float": (int, float),
    "bool": bool,
    "list": list,
    "dict": dict,
}


@dataclass(frozen=True)
class ToolSpec:
    name: str
    schema: dict[str, str]
    behavior: Behavior
    description: str = ""


class SimulatedEnvironment:
    """Registry of tools plus one world state, owned by a single task run."""

    def __init__(
        self,
        tools: list[ToolSpec] | None = None,
        world: WorldState | None = None,
        custom_predicates: dict[str, Callable[[WorldState], bool]] | None = None,
    ) -> None:
        self._tools: dict[str, ToolSpec] = {}
        self.world = world or WorldState()
        self.custom_predicates = dict(custom_predicates or {})
        for tool in tools or []:
            self.register(tool)

    def register(self, tool: ToolSpec) -> None:
        self._tools[tool.name] = tool

    def tool_names(self) -> list[str]:
        return list(self._tools)

    def invoke(self, name: str, args: dict[str, Any]) -> tuple[str, StepOutcome]:
        """Run a registered tool. Schema violations and behavior failures come
        back as tool-error outcomes, not exceptions; only an unregistered name
        raises."""
        tool = self._tools.get(name)
        if tool is None:
            raise UnknownTool(f"no tool named {name!r}")
        problem = self._check_args(tool, args)
        if problem is not None:
            output, outcome = problem, StepOutcome.TOOL_ERROR
        else:
            try:
                output, outcome = tool.behavior(args, self.world), StepOutcome.OK
            except ToolFailure as exc:
                output, outcome = str(exc), StepOutcome.TOOL_ERROR
        self.world.invocation_log.append(
            InvocationRecord(tool=name, args=dict(args), outcome=outcome)
        )
        return output, outcome

    @staticmethod
    def _check_args(tool: ToolSpec, args: dict[str, Any]) -> str | None:
        for arg_name, type_name in tool.schema.items():
            if arg_name not in args:
                return f"tool error: missing required argument {arg_name!r}"
            expected = _ARG_TYPES.get(type_name)
            if expected is not None and not isinstance(args[arg_name], expected):
                return (
                    f"tool error: argument {arg_name!r} must be of type {type_name}"
                )
        return None


# -- milestone predicates ----------------------------------------------------


class MilestoneKind(str, Enum):
    FILE_EXISTS = "file_exists"
    FILE_CONTAINS = "file_contains"
    TOOL_CALLED = "tool_called"
    CUSTOM = "custom"


@dataclass(frozen=True)
class MilestonePredicate:
    kind: MilestoneKind
    params: tuple[str, ...]


def parse_predicate(text: str) -> MilestonePredicate:
    """Parse the colon syntax used in scripted mode:

    - ``file_exists:<path>``
    - ``file_contains:<path>:<needle>``
    - ``tool_called:<name>`` or ``tool_called:<name>:<min_count>``
    - ``custom:<registered name>``
    """
    head, _, rest = text.partition(":")
    if head == MilestoneKind.FILE_EXISTS.value and rest:
        return MilestonePredicate(MilestoneKind.FILE_EXISTS, (rest,))
    if head == MilestoneKind.FILE_CONTAINS.value and rest:
        path, sep, needle = rest.partition(":")
        if sep:
            return MilestonePredicate(MilestoneKind.FILE_CONTAINS, (path, needle))
    if head == MilestoneKind.TOOL_CALLED.value and rest:
        name, sep, count = rest.partition(":")
        if not sep:
            return MilestonePredicate(MilestoneKind.TOOL_CALLED, (name, "1"))
        if count.isdigit():
            return MilestonePredicate(MilestoneKind.TOOL_CALLED, (name, count))
    if head == MilestoneKind.CUSTOM.value and rest:
        return MilestonePredicate(MilestoneKind.CUSTOM, (rest,))
    raise BadPredicate(f"cannot parse milestone predicate {text!r}")


def _predicate_holds(pred: MilestonePredicate, env: SimulatedEnvironment) -> bool:
    world = env.world
    if pred.kind is MilestoneKind.FILE_EXISTS:
        return pred.params[0] in world.files
    if pred.kind is MilestoneKind.FILE_CONTAINS:
        path, needle = pred.params
        return needle in world.files.get(path, "")
    if pred.kind is MilestoneKind.TOOL_CALLED:
        name, min_count = pred.params
        # only clean invocations count toward the milestone
        calls = sum(
            1
            for rec in world.invocation_log
            if rec.tool == name and rec.outcome is StepOutcome.OK
        )
        return calls >= int(min_count)
    fn = env.custom_predicates.get(pred.params[0])
    if fn is None:
        raise BadPredicate(f"no custom predicate registered as {pred.params[0]!r}")
    return bool(fn(world))


def evaluate_milestones(milestones: list[str], env: SimulatedEnvironment) -> bool:
    """Conjunction over the goal's predicates; vacuously true when empty."""
    return all(_predicate_holds(parse_predicate(m), env) for m in milestones)


# -- builtin demo tools --------------------------------------------------------


def _products_detail(args: dict[str, Any], world: WorldState) -> str:
    sku = args["sku"]
    products = world.datasets.get("products", {})
    if sku not in products:
        supported = ", ".join(sorted(products))
        raise ToolFailure(
            f"fail. Can not find product {sku}. Supported product: {supported}, ..."
        )
    return str(products[sku])


def _reviews_list(args: dict[str, Any], world: WorldState) -> str:
    sku = args["sku"]
    reviews = world.datasets.get("reviews", {})
    if sku not in reviews:
        raise ToolFailure(f"fail. Can not find reviews for product {sku}.")
    return str(reviews[sku])


def _write_to_file(args: dict[str, Any], world: WorldState) -> str:
    world.files[args["filepath"]] = args["content"]
    return args["content"]


def _read_file(args: dict[str, Any], world: WorldState) -> str:
    path = args["filepath"]
    if path not in world.files:
        raise ToolFailure(f"fail. No such file {path}.")
    return world.files[path]


def _keyword_search(args: dict[str, Any], world: WorldState) -> str:
    query = args["query"]
    tokens = [t for t in query.lower().split() if t]
    documents = world.datasets.get("documents", [])
    matches = [
        doc for doc in documents if all(token in doc.lower() for token in tokens)
    ]
    if not matches:
        return f"No results for {query}."
    return "\n".join(matches)


def builtin_toolkit() -> list[ToolSpec]:
    """The demo tools: product lookups, reviews, a file system, and a
    keyword search over document fixtures."""
    return [
        ToolSpec(
            name="RapidAPIEnv_rapi_wayfair_products_detail",
            schema={"sku": "str"},
            behavior=_products_detail,
            description="Fetch the detail record of a product by sku.",
        ),
        ToolSpec(
            name="RapidAPIEnv_rapi_wayfair_reviews_list",
            schema={"sku": "str"},
            behavior=_reviews_list,
            description="Fetch the reviews of a product by sku.",
        ),
        ToolSpec(
            name="FileSystemEnv_write_to_file",
            schema={"filepath": "str", "content": "str"},
            behavior=_write_to_file,
            description="Write content to a path in the simulated file system.",
        ),
        ToolSpec(
            name="FileSystemEnv_read_file",
            schema={"filepath": "str"},
            behavior=_read_file,
            description="Read a path from the simulated file system.",
        ),
        ToolSpec(
            name="SearchEnv_keyword_search",
            schema={"query": "str"},
            behavior=_keyword_search,
            description="Search the document fixtures for all query tokens.",
        ),
    ]


def build_environment(
    env_setup: list[dict[str, Any]], base_dir: str | Path | None = None
) -> SimulatedEnvironment:
    """Build an environment from a task file's env_setup section.

    Entries either register a dataset (inline ``records`` or a ``fixture``
    file resolved relative to ``base_dir``) or seed a file:

        {"dataset": "products", "records": {...}}
        {"dataset": "documents", "fixture": "fixtures/docs.json"}
        {"file": {"path": "notes.txt", "content": "..."}}
    """
    env = SimulatedEnvironment(tools=builtin_toolkit())
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    for entry in env_setup:
        if "dataset" in entry:
            if "records" in entry:
                records = entry["records"]
            elif "fixture" in entry:
                with open(base / entry["fixture"], encoding="utf-8") as fh:
                    records = json.load(fh)
            else:
                raise ValueError(f"dataset entry needs records or fixture: {entry}")
            env.world.datasets[entry["dataset"]] = records
        elif "file" in entry:
            env.world.files[entry["file"]["path"]] = entry["file"]["content"]
        else:
            raise ValueError(f"unrecognized env_setup entry: {entry}")
    return env
