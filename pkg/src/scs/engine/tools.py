"""The work agent's tool surface over one synthetic computer.

Tools only ever touch files inside the computer's drive/root mounts. Private
collaborator material is reachable solely through a message attachment that
the agent explicitly saves with ``save_attachment``.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Callable

from ..errors import (
    BadPathSyntax,
    EmptyMessageBlocked,
    PathOutsideRoot,
    ReservedPath,
    ToolArgumentError,
    ToolError,
    ToolNotFound,
    UnknownMessageId,
    UnknownRecipient,
    UnknownTool,
)
from ..fsplan import format_timestamp, parse_logical_path, parse_timestamp
from ..gateway import ToolCall
from ..jsonutil import atomic_write_bytes
from ..materialize import (
    SIDECAR_SUFFIX,
    ManifestEntry,
    SyntheticComputer,
    map_logical_path,
    set_virtual_mtime,
    unmap_physical_path,
    write_sidecar,
)
from ..setup import CollaboratorSet
from .clock import VirtualClock

USER = "user"
PRIVATE_PREFIX = "private:"
MAX_OUTPUT_CHARS = 20000


@dataclass
class Message:
    message_id: str
    sender: str
    recipient: str
    sent_at: datetime
    subject: str
    body: str
    attachments: list[tuple[str, str]] = field(default_factory=list)
    deliver_at: datetime | None = None
    in_reply_to: str | None = None

    def to_dict(self) -> dict:
        return {
            "message_id": self.message_id,
            "sender": self.sender,
            "recipient": self.recipient,
            "sent_at": format_timestamp(self.sent_at),
            "deliver_at": format_timestamp(self.deliver_at) if self.deliver_at else None,
            "subject": self.subject,
            "body": self.body,
            "attachments": [{"filename": f, "handle": h} for f, h in self.attachments],
            "in_reply_to": self.in_reply_to,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Message":
        return cls(
            message_id=data["message_id"],
            sender=data["sender"],
            recipient=data["recipient"],
            sent_at=parse_timestamp(data["sent_at"]),
            subject=data.get("subject", ""),
            body=data.get("body", ""),
            attachments=[(a["filename"], a["handle"]) for a in data.get("attachments", [])],
            deliver_at=parse_timestamp(data["deliver_at"]) if data.get("deliver_at") else None,
            in_reply_to=data.get("in_reply_to"),
        )


@dataclass
class ToolResult:
    name: str
    ok: bool
    output: str = ""
    error_code: str | None = None

    def to_dict(self) -> dict:
        out = {"name": self.name, "ok": self.ok, "output": self.output[:2000]}
        if self.error_code:
            out["error_code"] = self.error_code
        return out

    def as_text(self) -> str:
        if self.ok:
            return self.output[:MAX_OUTPUT_CHARS]
        return f"ERROR {self.error_code}: {self.output}"


@dataclass
class SimState:
    """Mutable world state shared by the tools during one run."""

    computer: SyntheticComputer
    collaborators: CollaboratorSet
    clock: VirtualClock
    run_dir: Path
    blank_guard: bool = True
    messages: list[Message] = field(default_factory=list)
    activity_log: list[dict] = field(default_factory=list)
    shares: list[dict] = field(default_factory=list)
    reads: list[dict] = field(default_factory=list)
    surfaced: set[str] = field(default_factory=set)
    day_finished: bool = False
    touched_created: list[str] = field(default_factory=list)
    touched_modified: list[str] = field(default_factory=list)

    def message(self, message_id: str) -> Message:
        for m in self.messages:
            if m.message_id == message_id:
                return m
        raise UnknownMessageId(f"no message {message_id!r}")

    def next_message_id(self) -> str:
        return f"m{len(self.messages) + 1:05d}"

    def next_file_id(self) -> str:
        n = 1
        while f"u{n:04d}" in self.computer.manifest:
            n += 1
        return f"u{n:04d}"

    def inbox(self) -> list[Message]:
        return [m for m in self.messages
                if m.recipient == USER and m.deliver_at is not None and m.deliver_at <= self.clock.current]


# ---------------------------------------------------------------------------
# path handling
# ---------------------------------------------------------------------------


def resolve_path(state: SimState, path: Any) -> tuple[str, Path]:
    """Map an agent-supplied path to (logical path, host path) inside a mount.

    Accepts logical paths (``D:/x/y.txt``) or physical paths relative to the
    computer root (``drives/D/x/y.txt``). Anything that escapes a mount after
    symlink resolution is refused.
    """
    if not isinstance(path, str) or not path.strip():
        raise ToolArgumentError("path must be a non-empty string")
    computer = state.computer
    os_style = computer.os_style
    raw = path.strip()
    if len(raw) > 3 and raw.endswith("/"):
        raw = raw.rstrip("/")
    try:
        parse_logical_path(raw, os_style)
        logical = raw
    except BadPathSyntax:
        rel = raw.replace("\\", "/").strip("/")
        try:
            logical = unmap_physical_path(rel, os_style)
        except BadPathSyntax:
            raise PathOutsideRoot(f"{path!r} does not name a location on this computer") from None
    mount, _ = parse_logical_path(logical, os_style)
    if os_style == "windows" and mount not in computer.drives:
        raise PathOutsideRoot(f"drive {mount}: does not exist on this computer")
    host = computer.root / map_logical_path(logical, os_style)
    mounts = [m.resolve() for m in computer.mounts()]
    resolved = host.resolve()
    if not any(resolved == m or m in resolved.parents for m in mounts):
        raise PathOutsideRoot(f"{path!r} resolves outside the computer")
    return logical, host


def _reserved(logical: str) -> bool:
    return logical.endswith(SIDECAR_SUFFIX)


# ---------------------------------------------------------------------------
# tools
# ---------------------------------------------------------------------------


def _arg(args: dict, name: str, default: Any = ...) -> Any:
    if name in args:
        return args[name]
    if default is ...:
        raise ToolArgumentError(f"missing argument {name!r}")
    return default


def tool_list_dir(state: SimState, args: dict) -> str:
    path = _arg(args, "path", "")
    if not str(path).strip():
        computer = state.computer
        if computer.os_style == "windows":
            return "\n".join(f"{d}:/" for d in computer.drives)
        return "/"
    logical, host = resolve_path(state, path)
    if not host.is_dir():
        raise ToolNotFound(f"no directory {logical}")
    lines = []
    for child in sorted(host.iterdir(), key=lambda p: p.name):
        if child.name.endswith(SIDECAR_SUFFIX):
            continue
        lines.append(child.name + ("/" if child.is_dir() else ""))
    return "\n".join(lines)


def tool_read_file(state: SimState, args: dict) -> str:
    logical, host = resolve_path(state, _arg(args, "path"))
    if _reserved(logical):
        raise ReservedPath(f"{logical} is metadata, not a user file")
    if not host.is_file():
        raise ToolNotFound(f"no file {logical}")
    data = host.read_bytes()
    state.reads.append({
        "time": format_timestamp(state.clock.current),
        "path": logical,
        "sha256": hashlib.sha256(data).hexdigest(),
    })
    return data.decode("utf-8", "replace")


def _record_write(state: SimState, logical: str, host: Path, data: bytes, origin: str,
                  provenance: dict | None = None) -> None:
    computer = state.computer
    by_path = computer.by_logical_path()
    stamp = state.clock.current
    digest = hashlib.sha256(data).hexdigest()
    host.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(host, data)
    set_virtual_mtime(host, stamp)
    if logical in by_path:
        fid = by_path[logical]
        entry = computer.manifest[fid]
        entry.sha256, entry.byte_size, entry.virtual_timestamp = digest, len(data), stamp
        if logical not in state.touched_modified and logical not in state.touched_created:
            state.touched_modified.append(logical)
    else:
        fid = state.next_file_id()
        computer.manifest[fid] = ManifestEntry(logical, map_logical_path(logical, computer.os_style),
                                               stamp, origin, len(data), digest)
        state.touched_created.append(logical)
    sidecar = {
        "file_id": fid,
        "logical_path": logical,
        "origin": computer.manifest[fid].origin,
        "virtual_timestamp": format_timestamp(stamp),
        "dependencies": [],
        "sha256": digest,
    }
    if provenance:
        sidecar["provenance"] = provenance
    write_sidecar(host, sidecar)


def tool_write_file(state: SimState, args: dict) -> str:
    logical, host = resolve_path(state, _arg(args, "path"))
    if _reserved(logical):
        raise ReservedPath(f"{logical} is reserved for metadata")
    content = _arg(args, "content")
    if not isinstance(content, str):
        raise ToolArgumentError("content must be text")
    if host.is_dir():
        raise ToolArgumentError(f"{logical} is a directory")
    data = content.encode("utf-8")
    _record_write(state, logical, host, data, "authored")
    return f"wrote {len(data)} bytes to {logical}"


def tool_send_message(state: SimState, args: dict) -> str:
    target = state.collaborators.resolve(str(_arg(args, "recipient")))
    if target is None:
        raise UnknownRecipient(f"nobody called {args.get('recipient')!r}")
    body = str(_arg(args, "body", ""))
    if state.blank_guard and not body.strip():
        raise EmptyMessageBlocked("message body is empty; write the content before sending")
    attach_paths = _arg(args, "attachments", []) or []
    if not isinstance(attach_paths, list):
        raise ToolArgumentError("attachments must be a list of paths")
    message_id = state.next_message_id()
    snapshots = []
    for raw in attach_paths:
        logical, host = resolve_path(state, raw)
        if not host.is_file() or _reserved(logical):
            raise ToolNotFound(f"cannot attach {logical}")
        name = host.name
        rel = f"attachments/{message_id}/{name}"
        atomic_write_bytes(state.run_dir / rel, host.read_bytes())
        snapshots.append((name, rel))
    state.messages.append(Message(
        message_id=message_id,
        sender=USER,
        recipient=target.collab_id,
        sent_at=state.clock.current,
        subject=str(args.get("subject", "")),
        body=body,
        attachments=snapshots,
    ))
    return f"sent {message_id} to {target.name}"


def render_inbox(messages: list[Message]) -> str:
    lines = []
    for m in messages:
        files = ", ".join(f"[{i}] {f}" for i, (f, _) in enumerate(m.attachments)) or "none"
        lines.append(f"{m.message_id} from {m.sender} at {format_timestamp(m.deliver_at)} | "
                     f"{m.subject}\n{m.body}\nattachments: {files}")
    return "\n\n".join(lines) if lines else "inbox empty"


def tool_check_inbox(state: SimState, args: dict) -> str:
    visible = state.inbox()
    state.surfaced.update(m.message_id for m in visible)
    return render_inbox(visible)


def attachment_bytes(state: SimState, handle: str) -> bytes:
    if handle.startswith(PRIVATE_PREFIX):
        store = state.computer.private_store
        collab, _, name = handle[len(PRIVATE_PREFIX):].partition("/")
        return (Path(store) / collab / name).read_bytes()
    return (state.run_dir / handle).read_bytes()


def tool_save_attachment(state: SimState, args: dict) -> str:
    message = state.message(str(_arg(args, "message_id")))
    if message.recipient != USER or message.deliver_at is None or message.deliver_at > state.clock.current:
        raise UnknownMessageId(f"{message.message_id} is not in your inbox")
    try:
        index = int(_arg(args, "index", 0))
    except (TypeError, ValueError):
        raise ToolArgumentError("index must be an integer") from None
    if not 0 <= index < len(message.attachments):
        raise ToolArgumentError(f"{message.message_id} has no attachment {index}")
    filename, handle = message.attachments[index]
    dest = str(_arg(args, "dest"))
    logical, host = resolve_path(state, dest)
    if host.is_dir() or dest.endswith("/"):
        logical, host = resolve_path(state, logical.rstrip("/") + "/" + filename)
    if _reserved(logical):
        raise ReservedPath(f"{logical} is reserved for metadata")
    data = attachment_bytes(state, handle)
    provenance = {"relation": "shared", "message_id": message.message_id, "source": handle,
                  "shared_by": message.sender}
    _record_write(state, logical, host, data, "received", provenance)
    state.shares.append({
        "time": format_timestamp(state.clock.current),
        "message_id": message.message_id,
        "source": handle,
        "dest": logical,
        "sha256": hashlib.sha256(data).hexdigest(),
    })
    return f"saved {filename} to {logical}"


def tool_log_activity(state: SimState, args: dict) -> str:
    text = str(_arg(args, "text")).strip()
    if not text:
        raise ToolArgumentError("activity text is empty")
    entry = {
        "time": state.clock.current.strftime("%H:%M"),
        "date": state.clock.current.date().isoformat(),
        "text": text,
        "files_created": list(state.touched_created),
        "files_modified": list(state.touched_modified),
    }
    state.activity_log.append(entry)
    state.touched_created.clear()
    state.touched_modified.clear()
    return "logged"


def tool_finish_day(state: SimState, args: dict) -> str:
    state.day_finished = True
    return "day closed"


TOOLS: dict[str, Callable[[SimState, dict], str]] = {
    "list_dir": tool_list_dir,
    "read_file": tool_read_file,
    "write_file": tool_write_file,
    "send_message": tool_send_message,
    "check_inbox": tool_check_inbox,
    "save_attachment": tool_save_attachment,
    "log_activity": tool_log_activity,
    "finish_day": tool_finish_day,
}


def handle_tool_call(state: SimState, invocation: ToolCall) -> ToolResult:
    """Run one tool call. Failures raise a ToolError subclass."""
    tool = TOOLS.get(invocation.name)
    if tool is None:
        raise UnknownTool(f"no tool named {invocation.name!r}")
    args = invocation.arguments if isinstance(invocation.arguments, dict) else {}
    return ToolResult(invocation.name, True, tool(state, args))


def run_tool(state: SimState, invocation: ToolCall) -> ToolResult:
    """Like handle_tool_call, but a refused call becomes an error result."""
    try:
        return handle_tool_call(state, invocation)
    except ToolError as exc:
        return ToolResult(invocation.name, False, str(exc), exc.code)
    except OSError as exc:
        return ToolResult(invocation.name, False, str(exc), "HostError")


def private_digests(private_store: Path) -> dict[str, str]:
    """sha256 -> 'collab/filename' for every private file, sidecars excluded."""
    out = {}
    for dirpath, _, files in os.walk(private_store):
        for name in sorted(files):
            if name.endswith(SIDECAR_SUFFIX):
                continue
            full = Path(dirpath) / name
            out[hashlib.sha256(full.read_bytes()).hexdigest()] = full.relative_to(private_store).as_posix()
    return out
