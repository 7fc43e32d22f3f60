from __future__ import annotations

import json
import random

import pytest

from helpers import scripted
from ice.errors import HttpBackendError, NoScenarioMatch
from ice.llm import (
    CallTag,
    CompletionRequest,
    HttpChatBackend,
    Message,
    Role,
    ScriptedBackend,
    ScriptedScenario,
    TagRoutingBackend,
    render_request,
)


def request(content: str, tag: CallTag = CallTag.TOOL_HANDLING,
            system: str = "sys") -> CompletionRequest:
    return CompletionRequest(system, (Message(Role.USER, content),), tag)


def test_render_layout_is_stable():
    req = CompletionRequest(
        "system text",
        (Message(Role.USER, "hello"), Message(Role.ASSISTANT, "hi"),
         Message(Role.USER, "go on")),
        CallTag.PLANNING,
    )
    assert render_request(req) == "system text\nUser: hello\nAssistant: hi\nUser: go on"


def test_requests_need_messages():
    with pytest.raises(ValueError):
        CompletionRequest("sys", (), CallTag.OTHER)


def test_scripted_match_and_counters():
    backend = scripted([
        {"match": "Subtask: research climate", "response": json.dumps(
            {"thought": "search", "tool_name": "SearchEnv_keyword_search",
             "tool_args": {"query": "climate"}})},
    ])
    reply = backend.complete(request("Subtask: research climate"))
    assert json.loads(reply)["tool_name"] == "SearchEnv_keyword_search"
    snap = backend.counters.snapshot()
    assert snap["all"] == 1
    assert snap["by_tag"]["tool_handling"] == 1


def test_counters_sum_over_tags():
    backend = scripted([{"match": "", "response": "ok"}])
    for _ in range(3):
        backend.complete(request("x", CallTag.PLANNING))
    for _ in range(5):
        backend.complete(request("x", CallTag.TOOL_HANDLING))
    snap = backend.counters.snapshot()
    assert snap["all"] == 8
    assert sum(snap["by_tag"].values()) == 8
    assert snap["by_tag"]["planning"] == 3


def test_no_match_is_an_error_never_a_default():
    backend = scripted([{"match": "something specific", "response": "ok"}])
    with pytest.raises(NoScenarioMatch):
        backend.complete(request("entirely different"))
    # failed attempts are still counted: the call reached the provider
    assert backend.counters.snapshot()["all"] == 1


def test_first_matching_rule_with_remaining_uses_fires():
    backend = scripted([
        {"match": "step", "response": "first", "max_uses": 2},
        {"match": "step", "response": "second"},
    ])
    replies = [backend.complete(request("step")) for _ in range(4)]
    assert replies == ["first", "first", "second", "second"]


def test_regex_rules():
    backend = scripted([
        {"match": r"Completed steps: [02468]$", "response": "even", "regex": True},
        {"match": "Completed steps:", "response": "odd"},
    ])
    assert backend.complete(request("Completed steps: 0")) == "even"
    assert backend.complete(request("Completed steps: 1")) == "odd"


def test_structured_responses_are_serialized():
    scenario = ScriptedScenario.from_list(
        [{"match": "", "response": {"subgoals": []}}]
    )
    backend = ScriptedBackend(scenario)
    assert json.loads(backend.complete(request("x"))) == {"subgoals": []}


def test_replay_from_reset_is_byte_identical():
    rules = [
        {"match": "a", "response": "one", "max_uses": 1},
        {"match": "", "response": "fallback"},
    ]
    backend = scripted(rules)
    prompts = ["a", "a", "b"]

    def run():
        return [backend.complete(request(p)) for p in prompts], backend.counters.snapshot()

    first = run()
    backend.reset()
    second = run()
    assert first == second


def test_reset_counters_zeroes_everything():
    backend = scripted([{"match": "", "response": "ok"}])
    backend.complete(request("x"))
    backend.reset_counters()
    snap = backend.counters.snapshot()
    assert snap["all"] == 0
    assert all(v == 0 for v in snap["by_tag"].values())


def test_counters_match_shadow_accumulator():
    backend = scripted([{"match": "", "response": "ok"}])
    rng = random.Random(31)
    shadow = {tag: 0 for tag in CallTag}
    for _ in range(300):
        if rng.random() < 0.1:
            backend.reset_counters()
            shadow = {tag: 0 for tag in CallTag}
        else:
            tag = rng.choice(list(CallTag))
            backend.complete(request("x", tag))
            shadow[tag] += 1
        snap = backend.counters.snapshot()
        assert snap["all"] == sum(shadow.values())
        assert snap["by_tag"] == {t.value: n for t, n in shadow.items()}


def test_scenario_file_round_trip(tmp_path):
    rules = [{"match": "hello", "response": "world", "max_uses": 3}]
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(rules), encoding="utf-8")
    scenario = ScriptedScenario.from_file(str(path))
    assert scenario.rules[0].match == "hello"
    assert scenario.rules[0].max_uses == 3


def test_tag_routing_backend_routes_and_counts():
    planner = scripted([{"match": "", "response": "plan"}])
    handler = scripted([{"match": "", "response": "handle"}])
    router = TagRoutingBackend(handler, {CallTag.PLANNING: planner})
    assert router.complete(request("x", CallTag.PLANNING)) == "plan"
    assert router.complete(request("x", CallTag.TOOL_HANDLING)) == "handle"
    snap = router.counters.snapshot()
    assert snap["all"] == 2
    assert planner.counters.snapshot()["all"] == 1
    assert handler.counters.snapshot()["all"] == 1


def test_http_backend_requires_endpoint(monkeypatch):
    monkeypatch.delenv("ICE_LLM_ENDPOINT", raising=False)
    with pytest.raises(HttpBackendError):
        HttpChatBackend()


def test_http_backend_reads_environment(monkeypatch):
    monkeypatch.setenv("ICE_LLM_ENDPOINT", "http://localhost:1/v1/chat")
    monkeypatch.setenv("ICE_LLM_MODEL", "demo-model")
    monkeypatch.setenv("ICE_LLM_API_KEY", "secret")
    backend = HttpChatBackend(timeout=0.05)
    assert backend.model == "demo-model"
    with pytest.raises(HttpBackendError):
        backend.complete(request("x"))  # nothing listens on port 1
    assert backend.counters.snapshot()["all"] == 1
