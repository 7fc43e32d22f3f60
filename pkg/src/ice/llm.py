"""Completion backends with per-tag call accounting.

Every completion is tagged with what it is for (planning, tool handling,
consolidation, other) and counted exactly once, including calls that fail
after reaching the provider. Embedding lookups never go through this module,
so they never enter the call counts.

Two providers ship: a scripted backend that replays canned responses for
tests and benchmarks, and a generic HTTP chat-completion client for live use.
"""

from __future__ import annotations

import json
import os
import re
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .errors import HttpBackendError, NoScenarioMatch

__all__ = [
    "CallTag",
    "Role",
    "Message",
    "CompletionRequest",
    "CallCounters",
    "render_request",
    "LlmBackend",
    "ScriptedRule",
    "ScriptedScenario",
    "ScriptedBackend",
    "HttpChatBackend",
    "TagRoutingBackend",
]

ENV_ENDPOINT = "ICE_LLM_ENDPOINT"
ENV_MODEL = "ICE_LLM_MODEL"
ENV_API_KEY = "ICE_LLM_API_KEY"


class CallTag(str, Enum):
    PLANNING = "planning"
    TOOL_HANDLING = "tool_handling"
    CONSOLIDATION = "consolidation"
    OTHER = "other"


class Role(str, Enum):
    USER = "User"
    ASSISTANT = "Assistant"


@dataclass(frozen=True)
class Message:
    role: Role
    content: str


@dataclass(frozen=True)
class CompletionRequest:
    system: str
    messages: tuple[Message, ...]
    tag: CallTag

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("a completion request needs at least one message")


def user_message(content: str) -> Message:
    return Message(Role.USER, content)


def assistant_message(content: str) -> Message:
    return Message(Role.ASSISTANT, content)


def render_request(request: CompletionRequest) -> str:
    """Flatten a request to one string: system first, then role-prefixed messages.

    Scripted rules match against exactly this surface, so the layout is part
    of the scenario-file contract and must stay stable.
    """
    lines = [request.system]
    lines.extend(f"{m.role.value}: {m.content}" for m in request.messages)
    return "\n".join(lines)


class CallCounters:
    """Thread-safe totals per tag; ``all`` always equals the tag sum."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._by_tag: dict[CallTag, int] = {tag: 0 for tag in CallTag}

    def record(self, tag: CallTag) -> None:
        with self._lock:
            self._by_tag[tag] += 1

    @property
    def all(self) -> int:
        with self._lock:
            return sum(self._by_tag.values())

    def by_tag(self, tag: CallTag) -> int:
        with self._lock:
            return self._by_tag[tag]

    def snapshot(self) -> dict[str, Any]:
        with self._lock:
            by_tag = {tag.value: count for tag, count in self._by_tag.items()}
        return {"all": sum(by_tag.values()), "by_tag": by_tag}

    def reset(self) -> None:
        with self._lock:
            for tag in self._by_tag:
                self._by_tag[tag] = 0


def counters_delta(before: dict[str, Any], after: dict[str, Any]) -> dict[str, Any]:
    by_tag = {
        tag.value: after["by_tag"][tag.value] - before["by_tag"][tag.value]
        for tag in CallTag
    }
    return {"all": sum(by_tag.values()), "by_tag": by_tag}


class LlmBackend:
    """Base class: counts every call, then dispatches to the provider."""

    def __init__(self) -> None:
        self.counters = CallCounters()

    def complete(self, request: CompletionRequest) -> str:
        self.counters.record(request.tag)
        return self._complete(request)

    def _complete(self, request: CompletionRequest) -> str:
        raise NotImplementedError

    def reset_counters(self) -> None:
        self.counters.reset()


@dataclass
class ScriptedRule:
    """First matching rule with remaining uses fires; no match is an error."""

    match: str
    response: str
    max_uses: int | None = None
    regex: bool = False

    def matches(self, rendered: str) -> bool:
        if self.regex:
            return re.search(self.match, rendered, flags=re.DOTALL) is not None
        return self.match in rendered


@dataclass
class ScriptedScenario:
    rules: list[ScriptedRule] = field(default_factory=list)

    @classmethod
    def from_list(cls, raw: list[dict[str, Any]]) -> "ScriptedScenario":
        rules = []
        for item in raw:
            response = item["response"]
            if not isinstance(response, str):
                response = json.dumps(response, ensure_ascii=False)
            rules.append(
                ScriptedRule(
                    match=item["match"],
                    response=response,
                    max_uses=item.get("max_uses"),
                    regex=bool(item.get("regex", False)),
                )
            )
        return cls(rules=rules)

    @classmethod
    def from_file(cls, path: str) -> "ScriptedScenario":
        with open(path, encoding="utf-8") as fh:
            return cls.from_list(json.load(fh))


class ScriptedBackend(LlmBackend):
    """Deterministic test double driven by an ordered rule list."""

    def __init__(self, scenario: ScriptedScenario) -> None:
        super().__init__()
        self._scenario = scenario
        self._lock = threading.Lock()
        self._uses = [0] * len(scenario.rules)

    def _complete(self, request: CompletionRequest) -> str:
        rendered = render_request(request)
        with self._lock:
            for i, rule in enumerate(self._scenario.rules):
                if rule.max_uses is not None and self._uses[i] >= rule.max_uses:
                    continue
                if rule.matches(rendered):
                    self._uses[i] += 1
                    return rule.response
        excerpt = rendered if len(rendered) <= 400 else rendered[:200] + " ... " + rendered[-180:]
        raise NoScenarioMatch(
            f"no scripted rule matched a {request.tag.value} request: {excerpt!r}"
        )

    def reset(self) -> None:
        """Zero both the counters and the per-rule use counts."""
        self.reset_counters()
        with self._lock:
            self._uses = [0] * len(self._scenario.rules)


class HttpChatBackend(LlmBackend):
    """Minimal chat-completions client; endpoint, model, and key come from
    arguments or the ICE_LLM_* environment variables."""

    def __init__(
        self,
        endpoint: str | None = None,
        model: str | None = None,
        api_key: str | None = None,
        timeout: float = 60.0,
    ) -> None:
        super().__init__()
        self.endpoint = endpoint or os.environ.get(ENV_ENDPOINT, "")
        self.model = model or os.environ.get(ENV_MODEL, "")
        self.api_key = api_key or os.environ.get(ENV_API_KEY, "")
        self.timeout = timeout
        if not self.endpoint:
            raise HttpBackendError(
                f"no endpoint configured; set {ENV_ENDPOINT} or pass endpoint="
            )

    def _complete(self, request: CompletionRequest) -> str:
        wire_messages = [{"role": "system", "content": request.system}]
        wire_messages.extend(
            {"role": m.role.value.lower(), "content": m.content}
            for m in request.messages
        )
        body = json.dumps({"model": self.model, "messages": wire_messages}).encode()
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        http_request = urllib.request.Request(
            self.endpoint, data=body, headers=headers, method="POST"
        )
        try:
            with urllib.request.urlopen(http_request, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
            return payload["choices"][0]["message"]["content"]
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise HttpBackendError(f"chat completion failed: {exc}") from exc
        except (KeyError, IndexError, ValueError) as exc:
            raise HttpBackendError(f"malformed chat completion reply: {exc}") from exc


class TagRoutingBackend(LlmBackend):
    """Route requests to different providers per tag (e.g. a cheaper model for
    tool handling). The router's own counters still see every call."""

    def __init__(
        self, default: LlmBackend, overrides: dict[CallTag, LlmBackend] | None = None
    ) -> None:
        super().__init__()
        self.default = default
        self.overrides = dict(overrides or {})

    def _complete(self, request: CompletionRequest) -> str:
        backend = self.overrides.get(request.tag, self.default)
        return backend.complete(request)
