"""Exception hierarchy shared across the package."""

from __future__ import annotations


class IceError(Exception):
    """Base class for every error raised by this package."""


# --- plan trees ---------------------------------------------------------


class InvalidGoal(IceError):
    """A goal or goal id violates a structural constraint."""


class UnknownGoal(IceError):
    """A goal id does not resolve to any goal in the tree."""


class SplitOfSuccessfulGoal(IceError):
    """Splitting a goal that already finished successfully."""


class CannotAddSiblingToRoot(IceError):
    """The root goal has no siblings."""


class IllegalTransition(IceError):
    """A goal status move outside the allowed transition table."""


# --- trajectories -------------------------------------------------------


class AppendAfterFinalize(IceError):
    """Mutating a trajectory after its final status was set."""


class NonLeafTrajectory(IceError):
    """A trajectory claims a goal that is not a leaf of the tree."""


# --- consolidation ------------------------------------------------------


class UnfinalizedTree(IceError):
    """Consolidating a tree that still has in-progress goals."""


class PipelineSchemaError(IceError):
    """A pipeline document does not follow the wire schema."""


class ConsolidationFailed(IceError):
    """The backend never produced a valid pipeline within the repair budget."""


# --- memory -------------------------------------------------------------


class DimensionMismatch(IceError):
    """Embedding dimensions disagree between store and embedder."""


class PayloadKindMismatch(IceError):
    """A record payload does not match its declared kind."""


class EmbeddingBackendError(IceError):
    """The external embedding provider failed."""


class UnknownRecord(IceError):
    """A record id does not exist in the memory store."""


# --- llm backends -------------------------------------------------------


class BackendError(IceError):
    """A completion provider failed."""


class NoScenarioMatch(BackendError):
    """No scripted rule matched the rendered request."""


class HttpBackendError(BackendError):
    """The HTTP chat-completion call failed (transport, timeout, or bad reply)."""


# --- simulated environment ----------------------------------------------


class UnknownTool(IceError):
    """Invoking a tool name that is not registered."""


class BadPredicate(IceError):
    """A milestone predicate could not be parsed or resolved."""


# --- task engine --------------------------------------------------------


class PlanParseError(IceError):
    """The backend never produced a parseable plan within the repair budget."""


class RectifyParseError(IceError):
    """The backend never produced applicable rectification actions."""


class StepParseError(IceError):
    """Too many consecutive unparseable replies inside a step loop."""


class PipelineRunFailed(IceError):
    """Automaton execution hit a dead end or exhausted its repair budget."""


class TaskAborted(IceError):
    """A task run stopped on an unrecoverable backend failure."""


# --- harness ------------------------------------------------------------


class ArmFailed(IceError):
    """One benchmark arm failed; other arms are unaffected."""
