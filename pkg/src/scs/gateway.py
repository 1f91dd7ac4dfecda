"""Single access point for generative calls.

Three backends share one interface (``generate(request) -> GenerationResponse``):

* :class:`LiveBackend` talks to a chat-completion endpoint over HTTPS.
* :class:`ReplayBackend` answers from a recorded :class:`Transcript`.
* :class:`ScriptedBackend` answers from an ordered rule list.

Live and scripted backends can record into a transcript, so any run can be
replayed byte-for-byte later. Requests are identified by the SHA-256 of a
canonical serialization that does not depend on dict ordering or stray
whitespace.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import string
import threading
import time
import urllib.error
import urllib.request
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence, Union

from .errors import BackendUnavailable, InvalidRequest, ReplayMiss, SchemaViolation
from .jsonutil import dumps_line, parse_json_text

logger = logging.getLogger(__name__)

ROLE_LABELS = frozenset(
    {
        "echo",
        "persona-expander",
        "fs-planner",
        "artifact-writer",
        "setup-agent",
        "work-agent",
        "collaborator",
        "judge",
        "extractor",
        "skill-creator",
    }
)

FINISH_REASONS = frozenset({"complete", "tool_use", "truncated", "backend_error"})


# ---------------------------------------------------------------------------
# request / response types
# ---------------------------------------------------------------------------


def _normalize_ws(text: str) -> str:
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    return "\n".join(line.rstrip() for line in lines).strip()


@dataclass(frozen=True)
class GenerationRequest:
    role_label: str
    system_context: str
    messages: tuple[tuple[str, str], ...]
    schema_hint: str = "text"
    tool_results: tuple[tuple[str, str], ...] | None = None
    max_turn_budget: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple((str(s), str(t)) for s, t in self.messages))
        if self.tool_results is not None:
            object.__setattr__(
                self, "tool_results", tuple((str(n), str(r)) for n, r in self.tool_results)
            )

    @property
    def last_message(self) -> str:
        return self.messages[-1][1] if self.messages else ""

    def validate(self) -> None:
        if not self.messages:
            raise InvalidRequest("request has no messages")
        if self.role_label not in ROLE_LABELS:
            raise InvalidRequest(f"unregistered role label {self.role_label!r}")
        if self.schema_hint not in SCHEMAS:
            raise InvalidRequest(f"no validator registered for schema {self.schema_hint!r}")
        if not isinstance(self.max_turn_budget, int) or self.max_turn_budget < 1:
            raise InvalidRequest("max_turn_budget must be a positive integer")

    def canonical(self) -> list[Any]:
        # Positional layout fixes field order independent of any mapping order.
        return [
            self.role_label,
            _normalize_ws(self.system_context),
            [[s, _normalize_ws(t)] for s, t in self.messages],
            None if self.tool_results is None else [[n, _normalize_ws(r)] for n, r in self.tool_results],
            self.schema_hint,
            self.max_turn_budget,
        ]

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.canonical(), ensure_ascii=False, separators=(",", ":")).encode("utf-8")

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "arguments": self.arguments}

    @classmethod
    def from_dict(cls, data: dict) -> "ToolCall":
        return cls(name=str(data["name"]), arguments=dict(data.get("arguments") or {}))


@dataclass(frozen=True)
class GenerationResponse:
    text: str = ""
    tool_calls: tuple[ToolCall, ...] = ()
    finish_reason: str = "complete"
    usage: tuple[int, int] = (1, 0)
    error: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "tool_calls", tuple(self.tool_calls))
        object.__setattr__(self, "usage", tuple(self.usage))
        if self.finish_reason not in FINISH_REASONS:
            raise ValueError(f"unknown finish_reason {self.finish_reason!r}")
        if self.finish_reason == "tool_use" and not self.tool_calls:
            raise ValueError("finish_reason tool_use requires tool calls")

    def to_dict(self) -> dict:
        out = {
            "text": self.text,
            "tool_calls": [c.to_dict() for c in self.tool_calls],
            "finish_reason": self.finish_reason,
            "usage": list(self.usage),
        }
        if self.error is not None:
            out["error"] = self.error
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GenerationResponse":
        return cls(
            text=data.get("text", ""),
            tool_calls=tuple(ToolCall.from_dict(c) for c in data.get("tool_calls", [])),
            finish_reason=data.get("finish_reason", "complete"),
            usage=tuple(data.get("usage", (1, 0))),
            error=data.get("error"),
        )

    def serialize(self) -> bytes:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True).encode("utf-8")


def estimate_tokens(*texts: str) -> int:
    return sum(len(t) for t in texts) // 4


# ---------------------------------------------------------------------------
# schema registry
# ---------------------------------------------------------------------------

Validator = Callable[[GenerationResponse], None]
SCHEMAS: dict[str, Validator] = {}


def register_schema(name: str, validator: Validator) -> None:
    SCHEMAS[name] = validator


def _json_object(*required: str, lists: Sequence[str] = ()) -> Validator:
    def check(response: GenerationResponse) -> None:
        data = parse_json_text(response.text)
        if not isinstance(data, dict):
            raise SchemaViolation("expected a JSON object")
        missing = [k for k in required if k not in data]
        if missing:
            raise SchemaViolation("missing required fields", missing)
        bad = [k for k in lists if k in data and not isinstance(data[k], list)]
        if bad:
            raise SchemaViolation("fields must be lists", bad)

    return check


def _tool_calls(response: GenerationResponse) -> None:
    for call in response.tool_calls:
        if not isinstance(call.name, str) or not isinstance(call.arguments, dict):
            raise SchemaViolation("tool call must carry a name and an argument record")


register_schema("text", lambda response: None)
register_schema("json", lambda response: None if parse_json_text(response.text) is not None else None)
register_schema("user_profile", _json_object())
register_schema("fs_policy", _json_object("system_start"))
register_schema("fs_plan", _json_object("files", lists=("files", "directories", "edges")))
register_schema("artifact_content", _json_object())
register_schema("objectives", _json_object("deliverables", lists=("deliverables",)))
register_schema("collaborators", _json_object("collaborators", lists=("collaborators",)))
register_schema("weekly_plan", _json_object("activities", lists=("activities",)))
register_schema("tool_calls", _tool_calls)
register_schema("collaborator_reply", _json_object("body"))
register_schema("rubric", _json_object("items", lists=("items",)))
register_schema("rubric_merge", _json_object("items", lists=("items",)))
register_schema("rubric_scores", _json_object("awards"))
register_schema("retrospective", _json_object("sections"))
register_schema("experience_items", _json_object("items", lists=("items",)))
register_schema("experience_partition", _json_object("groups", lists=("groups",)))
register_schema("skill", _json_object("sections", lists=("sections",)))


# ---------------------------------------------------------------------------
# transcript
# ---------------------------------------------------------------------------


class Transcript:
    """Ordered (digest, response) log, optionally mirrored to a JSONL file."""

    def __init__(self, entries: Iterable[tuple[str, GenerationResponse]] = (), path: Path | None = None):
        self.entries: list[tuple[str, GenerationResponse]] = list(entries)
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, digest: str, response: GenerationResponse) -> None:
        with self._lock:
            self.entries.append((digest, response))
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as handle:
                    handle.write(dumps_line({"digest": digest, "response": response.to_dict()}))

    def save(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as handle:
            for digest, response in self.entries:
                handle.write(dumps_line({"digest": digest, "response": response.to_dict()}))

    @classmethod
    def load(cls, path: Path) -> "Transcript":
        entries = []
        with Path(path).open("r", encoding="utf-8") as handle:
            for line in handle:
                if not line.strip():
                    continue
                row = json.loads(line)
                entries.append((row["digest"], GenerationResponse.from_dict(row["response"])))
        return cls(entries)


# ---------------------------------------------------------------------------
# backends
# ---------------------------------------------------------------------------


class Backend:
    """Base class; subclasses implement :meth:`_generate`."""

    kind = "abstract"

    def __init__(self, record_to: Transcript | None = None):
        self.transcript = record_to
        self.request_count = 0
        self.token_estimate = 0
        self._stats_lock = threading.Lock()

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        response = self._generate(request)
        with self._stats_lock:
            self.request_count += 1
            self.token_estimate += response.usage[1]
        if self.transcript is not None:
            self.transcript.append(request.digest(), response)
        return response

    def _generate(self, request: GenerationRequest) -> GenerationResponse:  # pragma: no cover
        raise NotImplementedError


class ReplayBackend(Backend):
    """Serves recorded responses by request digest.

    A digest recorded several times is served in recording order; once its
    recordings are used up the last one keeps being returned.
    """

    kind = "replay"

    def __init__(self, transcript: Transcript, record_to: Transcript | None = None):
        super().__init__(record_to=record_to)
        self._by_digest: dict[str, list[GenerationResponse]] = defaultdict(list)
        for digest, response in transcript.entries:
            self._by_digest[digest].append(response)
        self._cursor: dict[str, int] = defaultdict(int)
        self._lock = threading.Lock()

    def _generate(self, request: GenerationRequest) -> GenerationResponse:
        digest = request.digest()
        recorded = self._by_digest.get(digest)
        if not recorded:
            raise ReplayMiss(digest, request.role_label)
        with self._lock:
            idx = min(self._cursor[digest], len(recorded) - 1)
            self._cursor[digest] += 1
        return recorded[idx]


ScriptResponse = Union[str, dict, GenerationResponse, Callable[[GenerationRequest], Any]]


@dataclass
class ScriptedRule:
    """Match on role label (``"*"`` for any) plus a substring of the last message."""

    role_label: str
    contains: str
    response: ScriptResponse

    def matches(self, request: GenerationRequest) -> bool:
        if self.role_label not in ("*", request.role_label):
            return False
        return self.contains in request.last_message

    @classmethod
    def from_dict(cls, data: dict) -> "ScriptedRule":
        response = {k: data[k] for k in ("text", "tool_calls", "finish_reason") if k in data}
        return cls(data.get("role_label", "*"), data.get("contains", ""), response)


def _template(text: str, request: GenerationRequest) -> str:
    return string.Template(text).safe_substitute(
        last_message=request.last_message, role_label=request.role_label
    )


def coerce_response(value: Any, request: GenerationRequest) -> GenerationResponse:
    if isinstance(value, GenerationResponse):
        return value
    if isinstance(value, str):
        text = _template(value, request)
        return GenerationResponse(text=text, usage=(1, estimate_tokens(text)))
    if isinstance(value, dict):
        if "text" in value or "tool_calls" in value:
            text = _template(value.get("text", ""), request)
            calls = tuple(ToolCall.from_dict(c) for c in value.get("tool_calls", []))
            reason = value.get("finish_reason") or ("tool_use" if calls else "complete")
            return GenerationResponse(text=text, tool_calls=calls, finish_reason=reason,
                                      usage=(1, estimate_tokens(text)))
        text = json.dumps(value, ensure_ascii=False, sort_keys=True)
        return GenerationResponse(text=text, usage=(1, estimate_tokens(text)))
    raise TypeError(f"cannot build a response from {type(value).__name__}")


class ScriptedBackend(Backend):
    kind = "scripted"

    def __init__(self, rules: Sequence[ScriptedRule], record_to: Transcript | None = None):
        super().__init__(record_to=record_to)
        self.rules = list(rules)

    @classmethod
    def from_file(cls, path: Path, record_to: Transcript | None = None) -> "ScriptedBackend":
        with Path(path).open("r", encoding="utf-8") as handle:
            rows = json.load(handle)
        return cls([ScriptedRule.from_dict(r) for r in rows], record_to=record_to)

    def _generate(self, request: GenerationRequest) -> GenerationResponse:
        for rule in self.rules:
            if rule.matches(request):
                value = rule.response(request) if callable(rule.response) else rule.response
                return coerce_response(value, request)
        raise BackendUnavailable(f"no scripted rule matches role {request.role_label!r}")


_TOOL_SPECS = {
    "list_dir": {"path": "string"},
    "read_file": {"path": "string"},
    "write_file": {"path": "string", "content": "string"},
    "send_message": {"recipient": "string", "subject": "string", "body": "string", "attachments": "array"},
    "check_inbox": {},
    "save_attachment": {"message_id": "string", "index": "integer", "dest": "string"},
    "log_activity": {"text": "string"},
    "finish_day": {},
}


def _tool_definitions() -> list[dict]:
    out = []
    for name, params in _TOOL_SPECS.items():
        props = {}
        for pname, ptype in params.items():
            props[pname] = {"type": ptype}
            if ptype == "array":
                props[pname]["items"] = {"type": "string"}
        out.append({"type": "function", "function": {
            "name": name,
            "parameters": {"type": "object", "properties": props, "required": [
                p for p in params if p != "attachments"]},
        }})
    return out


class LiveBackend(Backend):
    """Chat-completion client. Endpoint and key come from SCS_API_BASE / SCS_API_KEY."""

    kind = "live"
    attempts = 3
    backoff_start = 1.0

    def __init__(
        self,
        api_base: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        record_to: Transcript | None = None,
        timeout: float = 600.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__(record_to=record_to)
        self.api_base = (api_base or os.environ.get("SCS_API_BASE", "")).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get("SCS_API_KEY", "")
        self.model = model or os.environ.get("SCS_MODEL", "default")
        self.timeout = timeout
        self._sleep = sleep
        if not self.api_base:
            raise BackendUnavailable("SCS_API_BASE is not set")

    def _payload(self, request: GenerationRequest) -> dict:
        messages = [{"role": "system", "content": request.system_context}]
        for speaker, text in request.messages:
            role = speaker if speaker in ("user", "assistant") else "user"
            messages.append({"role": role, "content": text})
        if request.tool_results:
            results = "\n".join(f"[{name}] {text}" for name, text in request.tool_results)
            messages.append({"role": "user", "content": f"Tool results:\n{results}"})
        payload: dict[str, Any] = {"model": self.model, "messages": messages}
        if request.schema_hint == "tool_calls":
            payload["tools"] = _tool_definitions()
        elif request.schema_hint != "text":
            payload["response_format"] = {"type": "json_object"}
        return payload

    def _post(self, payload: dict) -> dict:
        body = json.dumps(payload).encode("utf-8")
        req = urllib.request.Request(
            f"{self.api_base}/chat/completions",
            data=body,
            headers={"Content-Type": "application/json", "Authorization": f"Bearer {self.api_key}"},
            method="POST",
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))

    def _generate(self, request: GenerationRequest) -> GenerationResponse:
        payload = self._payload(request)
        delay = self.backoff_start
        last_error = ""
        for attempt in range(1, self.attempts + 1):
            try:
                data = self._post(payload)
                return self._parse(data, request)
            except urllib.error.HTTPError as exc:
                # 429 and 5xx come from the serving path, not the request itself.
                if exc.code != 429 and exc.code < 500:
                    detail = exc.read().decode("utf-8", "replace")[:500]
                    return GenerationResponse(finish_reason="backend_error",
                                              error=f"HTTP {exc.code}: {detail}", usage=(1, 0))
                last_error = f"HTTP {exc.code}"
            except (urllib.error.URLError, ConnectionError, TimeoutError, OSError) as exc:
                last_error = str(exc)
            logger.warning("live backend attempt %d/%d failed: %s", attempt, self.attempts, last_error)
            if attempt < self.attempts:
                self._sleep(delay)
                delay *= 2
        raise BackendUnavailable(f"live backend failed after {self.attempts} attempts: {last_error}")

    @staticmethod
    def _parse(data: dict, request: GenerationRequest) -> GenerationResponse:
        choice = (data.get("choices") or [{}])[0]
        message = choice.get("message") or {}
        text = message.get("content") or ""
        calls = []
        for raw in message.get("tool_calls") or []:
            fn = raw.get("function") or {}
            args = fn.get("arguments") or "{}"
            try:
                parsed = json.loads(args) if isinstance(args, str) else dict(args)
            except json.JSONDecodeError:
                parsed = {"_raw": args}
            calls.append(ToolCall(fn.get("name", ""), parsed if isinstance(parsed, dict) else {"_raw": parsed}))
        reason = {"stop": "complete", "tool_calls": "tool_use", "length": "truncated"}.get(
            choice.get("finish_reason", "stop"), "complete")
        if reason == "tool_use" and not calls:
            reason = "complete"
        if calls and reason == "complete":
            reason = "tool_use"
        usage = data.get("usage") or {}
        tokens = usage.get("total_tokens")
        if tokens is None:
            tokens = estimate_tokens(request.system_context, *(t for _, t in request.messages), text)
        return GenerationResponse(text=text, tool_calls=tuple(calls), finish_reason=reason, usage=(1, int(tokens)))


def complete(request: GenerationRequest, backend: Backend) -> GenerationResponse:
    """Validate the request, obtain a response, and check it against its schema."""
    request.validate()
    response = backend.generate(request)
    if response.finish_reason != "backend_error":
        SCHEMAS[request.schema_hint](response)
    return response


def generate_json(backend: Backend, request: GenerationRequest) -> Any:
    """Complete a structured request and return the decoded JSON payload."""
    response = complete(request, backend)
    if response.finish_reason == "backend_error":
        raise BackendUnavailable(response.error or "backend error")
    return parse_json_text(response.text)


def make_backend(kind: str, transcript_path: Path | None = None, script: Path | None = None,
                 rules: Sequence[ScriptedRule] | None = None, record_path: Path | None = None) -> Backend:
    """Construct a backend by name.

    ``transcript_path`` is the recording target for live/scripted runs and the
    source for replay. ``record_path`` additionally lets a replay re-record what
    it served, which keeps a replayed run store identical to the original.
    """
    if kind == "replay":
        if transcript_path is None:
            raise BackendUnavailable("replay backend needs a transcript")
        if not Path(transcript_path).is_file():
            raise BackendUnavailable(f"no transcript at {transcript_path}")
        source = Transcript.load(transcript_path)
        record = Transcript(path=record_path) if record_path is not None else None
        return ReplayBackend(source, record_to=record)
    target = transcript_path or record_path
    record = Transcript(path=target) if target is not None else None
    if kind == "live":
        return LiveBackend(record_to=record)
    if kind == "scripted":
        if script is not None:
            return ScriptedBackend.from_file(script, record_to=record)
        if rules is None:
            from .demo import demo_rules

            rules = demo_rules()
        return ScriptedBackend(rules, record_to=record)
    raise BackendUnavailable(f"unknown backend {kind!r}")


def ask_json(backend: Backend, role_label: str, schema_hint: str, instructions: str,
             context: Any, system_context: str = "") -> Any:
    """Build a single-message structured request and return its decoded payload."""
    from .jsonutil import build_prompt

    request = GenerationRequest(
        role_label=role_label,
        system_context=system_context or f"You are the {role_label} stage. Reply with JSON only.",
        messages=(("user", build_prompt(instructions, context)),),
        schema_hint=schema_hint,
    )
    return generate_json(backend, request)
