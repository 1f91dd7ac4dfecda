import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from scs.errors import InvalidRequest, ReplayMiss, SchemaViolation
from scs.gateway import (
    GenerationRequest,
    GenerationResponse,
    ReplayBackend,
    ScriptedBackend,
    ScriptedRule,
    ToolCall,
    Transcript,
    ask_json,
    complete,
    make_backend,
)


def echo_request(text="ping", role="echo"):
    return GenerationRequest(role_label=role, system_context="sys", messages=(("user", text),))


def test_echo_rule_returns_last_message():
    backend = ScriptedBackend([ScriptedRule("echo", "", "$last_message")])
    assert complete(echo_request("ping"), backend).text == "ping"


def test_rules_match_in_order_on_role_and_substring():
    backend = ScriptedBackend([
        ScriptedRule("judge", "score", "first"),
        ScriptedRule("*", "score", "second"),
        ScriptedRule("*", "", "fallback"),
    ])
    judge = GenerationRequest("judge", "", (("user", "please score this"),))
    other = GenerationRequest("extractor", "", (("user", "score it"),))
    plain = GenerationRequest("extractor", "", (("user", "hello"),))
    assert [complete(r, backend).text for r in (judge, other, plain)] == ["first", "second", "fallback"]


def test_replay_is_byte_identical_across_two_passes(tmp_path):
    path = tmp_path / "t.jsonl"
    recorder = ScriptedBackend([ScriptedRule("echo", "", "$last_message")], record_to=Transcript(path=path))
    requests = [echo_request("one"), echo_request("two")]
    for r in requests:
        complete(r, recorder)
    assert len(Transcript.load(path)) == 2

    passes = []
    for _ in range(2):
        replay = ReplayBackend(Transcript.load(path))
        passes.append([complete(r, replay).serialize() for r in requests])
    assert passes[0] == passes[1]
    assert [json.loads(b)["text"] for b in passes[0]] == ["one", "two"]


def test_replay_miss_on_mutated_request(tmp_path):
    path = tmp_path / "t.jsonl"
    recorder = ScriptedBackend([ScriptedRule("echo", "", "$last_message")], record_to=Transcript(path=path))
    complete(echo_request("ping"), recorder)
    replay = ReplayBackend(Transcript.load(path))
    with pytest.raises(ReplayMiss):
        complete(echo_request("pong"), replay)


def test_replay_serves_repeated_digests_in_recording_order(tmp_path):
    responses = iter(["a", "b"])
    path = tmp_path / "t.jsonl"
    recorder = ScriptedBackend([ScriptedRule("echo", "", lambda r: next(responses))], record_to=Transcript(path=path))
    complete(echo_request(), recorder)
    complete(echo_request(), recorder)
    replay = ReplayBackend(Transcript.load(path))
    assert [complete(echo_request(), replay).text for _ in range(2)] == ["a", "b"]


def test_digest_ignores_trailing_whitespace_and_line_endings():
    a = GenerationRequest("echo", "sys  \r\n", (("user", "hi\r\nthere  "),))
    b = GenerationRequest("echo", "sys", (("user", "hi\nthere"),))
    assert a.digest() == b.digest()


def test_digest_distinguishes_fields():
    base = echo_request()
    assert base.digest() != GenerationRequest("judge", "sys", (("user", "ping"),)).digest()
    assert base.digest() != GenerationRequest("echo", "sys", (("user", "ping"),), schema_hint="rubric").digest()
    assert base.digest() != GenerationRequest("echo", "sys", (("user", "ping"),), tool_results=()).digest()


@given(st.text(), st.text(), st.lists(st.tuples(st.sampled_from(["user", "assistant"]), st.text()), min_size=1))
def test_digest_is_stable(system, last, history):
    r1 = GenerationRequest("echo", system, tuple(history) + (("user", last),))
    r2 = GenerationRequest("echo", system, tuple(history) + (("user", last),))
    assert r1.canonical_bytes() == r2.canonical_bytes()
    assert r1.digest() == r2.digest()


@given(st.lists(st.text(min_size=1, max_size=30), min_size=1, max_size=8))
def test_recording_closure(texts):
    transcript = Transcript()
    recorder = ScriptedBackend([ScriptedRule("echo", "", "$last_message")], record_to=transcript)
    live = [complete(echo_request(t), recorder).serialize() for t in texts]
    replay = ReplayBackend(transcript)
    assert [complete(echo_request(t), replay).serialize() for t in texts] == live


def test_invalid_requests_are_rejected():
    with pytest.raises(InvalidRequest):
        complete(GenerationRequest("nobody", "", (("user", "x"),)), ScriptedBackend([]))
    with pytest.raises(InvalidRequest):
        complete(GenerationRequest("echo", "", ()), ScriptedBackend([]))
    with pytest.raises(InvalidRequest):
        complete(GenerationRequest("echo", "", (("user", "x"),), max_turn_budget=0), ScriptedBackend([]))


def test_schema_violation_for_non_json_structured_reply():
    backend = ScriptedBackend([ScriptedRule("judge", "", "not json at all")])
    with pytest.raises(SchemaViolation):
        ask_json(backend, "judge", "rubric", "Draft", {})


def test_tool_call_schema_rejects_non_record_arguments():
    bad = GenerationResponse(text="", tool_calls=(ToolCall("list_dir", "C:/"),), finish_reason="tool_use")
    backend = ScriptedBackend([ScriptedRule("work-agent", "", bad)])
    request = GenerationRequest("work-agent", "", (("user", "go"),), schema_hint="tool_calls")
    with pytest.raises(SchemaViolation):
        complete(request, backend)


def test_response_round_trip():
    response = GenerationResponse(text="x", tool_calls=(ToolCall("list_dir", {"path": "C:/"}),),
                                  finish_reason="tool_use", usage=(1, 3))
    assert GenerationResponse.from_dict(json.loads(response.serialize())) == response


def test_make_backend_replay_needs_transcript():
    from scs.errors import BackendUnavailable

    with pytest.raises(BackendUnavailable):
        make_backend("replay")


class FlakyLive:
    """Stands in for the transport: fails ``failures`` times, then answers."""

    def __init__(self, failures):
        self.failures = failures
        self.calls = 0

    def __call__(self, payload):
        self.calls += 1
        if self.calls <= self.failures:
            raise ConnectionError("reset by peer")
        return {"choices": [{"message": {"content": "ok"}, "finish_reason": "stop"}],
                "usage": {"total_tokens": 7}}


def live_backend(transport, sleeps):
    from scs.gateway import LiveBackend

    backend = LiveBackend(api_base="http://127.0.0.1:9", api_key="k", sleep=sleeps.append)
    backend._post = transport
    return backend


def test_live_retries_transport_errors_with_doubling_backoff():
    sleeps = []
    transport = FlakyLive(failures=2)
    response = complete(echo_request(), live_backend(transport, sleeps))
    assert response.text == "ok" and response.usage == (1, 7)
    assert transport.calls == 3
    assert sleeps == [1.0, 2.0]


def test_live_gives_up_after_three_attempts():
    from scs.errors import BackendUnavailable

    sleeps = []
    transport = FlakyLive(failures=5)
    with pytest.raises(BackendUnavailable):
        complete(echo_request(), live_backend(transport, sleeps))
    assert transport.calls == 3


def test_live_parses_tool_calls():
    from scs.gateway import LiveBackend

    data = {"choices": [{"message": {"content": None, "tool_calls": [
        {"function": {"name": "list_dir", "arguments": "{\"path\": \"C:/\"}"}}]}, "finish_reason": "tool_calls"}]}
    response = LiveBackend._parse(data, echo_request())
    assert response.finish_reason == "tool_use"
    assert response.tool_calls == (ToolCall("list_dir", {"path": "C:/"}),)
