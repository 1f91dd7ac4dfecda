"""Filesystem policy, file plan, plan validation and instantiation order.

Logical paths are written the way the simulated user would see them:
``D:/Research/notes.txt`` on a Windows-style computer, ``/Users/ana/notes.txt``
on a macOS-style one. Dependency edges point from the earlier file to the file
that builds on it, so ``from_id`` must be materialized before ``to_id``.
"""

from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Iterable

from .errors import BadPathSyntax, CycleDetected, PlanInvalid, SchemaViolation
from .gateway import Backend, ask_json
from .profile import UserProfile

OS_STYLES = ("windows", "macos")
ARTIFACT_TYPES = ("docx", "xlsx", "pptx", "pdf", "txt", "csv", "png", "other")
ORIGINS = ("authored", "web_download", "received", "system")
CONTENT_MODES = ("full", "stub")
RELATIONS = ("references", "derived_from", "later_version", "extracted_from")
MAX_PLAN_FILES = 5000

FATAL = "fatal"
WARNING = "warning"

_WIN_RE = re.compile(r"^([A-Z]):/(.*)$")
_BAD_CHARS = re.compile(r'[\\<>:"|?*\x00-\x1f\x7f]')
_TS_FORMAT = "%Y-%m-%dT%H:%M"


# ---------------------------------------------------------------------------
# logical paths
# ---------------------------------------------------------------------------


def parse_logical_path(path: str, os_style: str) -> tuple[str, list[str]]:
    """Split a logical path into (mount, components).

    The mount is a drive letter for Windows-style paths and ``"/"`` for macOS.
    A bare mount (``"C:/"`` or ``"/"``) has no components.
    """
    if not isinstance(path, str):
        raise BadPathSyntax(f"path must be a string, got {type(path).__name__}")
    if os_style == "windows":
        match = _WIN_RE.match(path)
        if not match:
            raise BadPathSyntax(f"{path!r} is not a drive-letter path like 'D:/dir/file'")
        mount, rest = match.group(1), match.group(2)
    elif os_style == "macos":
        if not path.startswith("/"):
            raise BadPathSyntax(f"{path!r} is not an absolute path")
        mount, rest = "/", path[1:]
    else:
        raise BadPathSyntax(f"unknown os style {os_style!r}")
    if rest == "":
        return mount, []
    parts = rest.split("/")
    for part in parts:
        if part in ("", ".", ".."):
            raise BadPathSyntax(f"{path!r} has an empty or relative component")
        if _BAD_CHARS.search(part):
            raise BadPathSyntax(f"{path!r} has a reserved character in {part!r}")
    return mount, parts


def format_logical_path(mount: str, parts: Iterable[str], os_style: str) -> str:
    tail = "/".join(parts)
    if os_style == "windows":
        return f"{mount}:/{tail}"
    return f"/{tail}"


def is_valid_path(path: Any, os_style: str) -> bool:
    try:
        parse_logical_path(path, os_style)
    except BadPathSyntax:
        return False
    return True


def ancestor_dirs(path: str, os_style: str) -> list[str]:
    """Directories strictly between the mount and ``path``, outermost first."""
    mount, parts = parse_logical_path(path, os_style)
    return [format_logical_path(mount, parts[:i], os_style) for i in range(1, len(parts))]


def clean_dir(path: str) -> str:
    """Drop trailing slashes but keep a bare mount intact."""
    if not isinstance(path, str):
        return path
    stripped = path.rstrip("/")
    if stripped == "":
        return "/"
    if re.fullmatch(r"[A-Z]:", stripped):
        return stripped + "/"
    return stripped


def artifact_type_for(path: str) -> str:
    name = path.rsplit("/", 1)[-1]
    if "." not in name:
        return "other"
    ext = name.rsplit(".", 1)[-1].lower()
    return ext if ext in ARTIFACT_TYPES else "other"


# ---------------------------------------------------------------------------
# timestamps
# ---------------------------------------------------------------------------


def parse_timestamp(value: Any) -> datetime:
    """Accept ISO-like strings at date or minute precision; seconds are dropped."""
    if isinstance(value, datetime):
        return value.replace(second=0, microsecond=0)
    text = str(value).strip().replace(" ", "T")
    for fmt in ("%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d"):
        try:
            return datetime.strptime(text, fmt).replace(second=0)
        except ValueError:
            continue
    raise SchemaViolation(f"cannot parse timestamp {value!r}", ["timestamp"])


def format_timestamp(value: datetime) -> str:
    return value.strftime(_TS_FORMAT)


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------


@dataclass
class FilesystemPolicy:
    system_start: datetime
    os_style: str
    drive_layout: list[str]
    default_paths: list[str] = field(default_factory=list)
    storage_patterns: list[tuple[str, str]] = field(default_factory=list)
    organization_style: str = ""
    naming_style: tuple[str, list[str]] = ("", [])
    usage_patterns: str = ""

    def to_dict(self) -> dict:
        return {
            "system_start": format_timestamp(self.system_start),
            "os_style": self.os_style,
            "drive_layout": list(self.drive_layout),
            "default_paths": list(self.default_paths),
            "storage_patterns": [{"purpose": p, "path": d} for p, d in self.storage_patterns],
            "organization_style": self.organization_style,
            "naming_style": {"description": self.naming_style[0], "examples": list(self.naming_style[1])},
            "usage_patterns": self.usage_patterns,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FilesystemPolicy":
        return policy_from_record(data, data.get("os_style", "windows"))

    def mounts(self) -> list[str]:
        return list(self.drive_layout)


@dataclass(frozen=True)
class PlannedFile:
    file_id: str
    logical_path: str
    artifact_type: str
    description: str
    virtual_timestamp: datetime
    origin: str = "authored"
    content_mode: str = "full"

    def to_dict(self) -> dict:
        return {
            "file_id": self.file_id,
            "logical_path": self.logical_path,
            "artifact_type": self.artifact_type,
            "description": self.description,
            "virtual_timestamp": format_timestamp(self.virtual_timestamp),
            "origin": self.origin,
            "content_mode": self.content_mode,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PlannedFile":
        return cls(
            file_id=data["file_id"],
            logical_path=data["logical_path"],
            artifact_type=data.get("artifact_type") or artifact_type_for(data["logical_path"]),
            description=data.get("description", ""),
            virtual_timestamp=parse_timestamp(data["virtual_timestamp"]),
            origin=data.get("origin", "authored"),
            content_mode=data.get("content_mode", "full"),
        )


@dataclass(frozen=True)
class DependencyEdge:
    from_id: str
    to_id: str
    relation: str = "derived_from"

    def to_dict(self) -> dict:
        return {"from_id": self.from_id, "to_id": self.to_id, "relation": self.relation}


@dataclass
class FilesystemPlan:
    policy: FilesystemPolicy
    directories: set[str]
    files: list[PlannedFile]
    edges: list[DependencyEdge]

    def file_by_id(self) -> dict[str, PlannedFile]:
        return {f.file_id: f for f in self.files}

    def predecessors(self, file_id: str) -> list[str]:
        return sorted(e.from_id for e in self.edges if e.to_id == file_id)

    def to_dict(self) -> dict:
        return {
            "policy": self.policy.to_dict(),
            "directories": sorted(self.directories),
            "files": [f.to_dict() for f in self.files],
            "edges": [e.to_dict() for e in self.edges],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FilesystemPlan":
        return cls(
            policy=FilesystemPolicy.from_dict(data["policy"]),
            directories=set(data.get("directories", [])),
            files=[PlannedFile.from_dict(f) for f in data.get("files", [])],
            edges=[DependencyEdge(e["from_id"], e["to_id"], e.get("relation", "derived_from"))
                   for e in data.get("edges", [])],
        )


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    code: str
    subject: str

    def to_dict(self) -> dict:
        return {"severity": self.severity, "code": self.code, "subject": self.subject}


# ---------------------------------------------------------------------------
# policy
# ---------------------------------------------------------------------------

POLICY_INSTRUCTIONS = (
    "Write the filesystem policy for this user's computer. Return a JSON object with keys "
    "system_start (YYYY-MM-DD HH:MM), drive_layout[], default_paths[], "
    "storage_patterns[{purpose, path}], organization_style, naming_style {description, examples[]}, "
    "usage_patterns. Paths must use the operating-system style given in the context."
)


def _drive_letter(entry: Any) -> str:
    if isinstance(entry, dict):
        entry = entry.get("drive") or entry.get("id") or ""
    text = str(entry).strip()
    # "C: (system)" style labels: only the leading token names the drive
    token = re.split(r"[\s(]", text, maxsplit=1)[0] if text else ""
    letter = token.replace(":", "").replace("/", "")
    if not re.fullmatch(r"[A-Z]", letter):
        raise SchemaViolation(f"drive identifier {text!r} is not a single letter", ["drive_layout"])
    return letter


def _check_paths(paths: Iterable[str], os_style: str, drives: list[str], field_name: str) -> None:
    for path in paths:
        try:
            mount, _ = parse_logical_path(clean_dir(path), os_style)
        except BadPathSyntax as exc:
            raise SchemaViolation(f"{exc}", [field_name]) from None
        if os_style == "windows" and mount not in drives:
            raise SchemaViolation(f"{path!r} uses drive {mount} outside the drive layout", [field_name])


def policy_from_record(data: dict, os_style: str, simulation_start: datetime | None = None) -> FilesystemPolicy:
    if os_style not in OS_STYLES:
        raise SchemaViolation(f"unknown os style {os_style!r}", ["os_style"])
    if not isinstance(data, dict):
        raise SchemaViolation("policy must be a JSON object")
    if "system_start" not in data:
        raise SchemaViolation("policy is missing required fields", ["system_start"])
    try:
        start = parse_timestamp(data["system_start"])
    except SchemaViolation:
        raise SchemaViolation("bad system_start", ["system_start"]) from None
    if simulation_start is not None and start >= simulation_start:
        raise SchemaViolation("system_start must precede the simulation start", ["system_start"])
    if os_style == "macos":
        drives = ["/"]
    else:
        raw = data.get("drive_layout") or []
        if not isinstance(raw, list) or not raw:
            raise SchemaViolation("drive layout must list at least one drive", ["drive_layout"])
        drives = []
        for entry in raw:
            letter = _drive_letter(entry)
            if letter not in drives:
                drives.append(letter)
    default_paths = [clean_dir(p) for p in data.get("default_paths") or []]
    _check_paths(default_paths, os_style, drives, "default_paths")
    storage = []
    for entry in data.get("storage_patterns") or []:
        if isinstance(entry, dict):
            storage.append((str(entry.get("purpose", "")), clean_dir(str(entry.get("path", "")))))
        else:
            storage.append((str(entry[0]), clean_dir(str(entry[1]))))
    _check_paths([p for _, p in storage], os_style, drives, "storage_patterns")
    naming = data.get("naming_style") or {}
    if isinstance(naming, str):
        naming = {"description": naming, "examples": []}
    return FilesystemPolicy(
        system_start=start,
        os_style=os_style,
        drive_layout=drives,
        default_paths=default_paths,
        storage_patterns=storage,
        organization_style=str(data.get("organization_style", "")),
        naming_style=(str(naming.get("description", "")), [str(x) for x in naming.get("examples", [])]),
        usage_patterns=str(data.get("usage_patterns", "")),
    )


def generate_policy(profile: UserProfile, backend: Backend, os_style: str = "windows",
                    simulation_start: datetime | None = None) -> FilesystemPolicy:
    """Ask the planner for a policy; the OS style is ours to decide, not the backend's."""
    profile.validate()
    record = ask_json(backend, "fs-planner", "fs_policy", POLICY_INSTRUCTIONS,
                      {"os_style": os_style, "profile": profile.to_dict()})
    return policy_from_record(record, os_style, simulation_start)


# ---------------------------------------------------------------------------
# plan
# ---------------------------------------------------------------------------

PLAN_INSTRUCTIONS = (
    "Plan the files on this user's computer. Return a JSON object with keys directories[] "
    "(logical directory paths), files[{file_id, logical_path, description, timestamp, origin "
    "(authored|web_download|received|system), content_mode (full|stub)}] and "
    "edges[{from, to, relation}] where relation is one of references, derived_from, "
    "later_version, extracted_from and 'from' is the earlier file."
)


def _with_ancestors(dirs: Iterable[str], os_style: str) -> set[str]:
    out: set[str] = set()
    for d in dirs:
        d = clean_dir(d)
        out.add(d)
        try:
            mount, parts = parse_logical_path(d, os_style)
        except BadPathSyntax:
            continue
        if not parts:
            # a bare mount is implicit, never a planned directory
            out.discard(d)
            continue
        out.update(ancestor_dirs(d, os_style))
    return out


def plan_from_record(data: dict, policy: FilesystemPolicy) -> FilesystemPlan:
    if not isinstance(data, dict) or not isinstance(data.get("files"), list):
        raise SchemaViolation("plan must carry a files list", ["files"])
    os_style = policy.os_style
    base_dirs = list(data.get("directories") or []) + list(policy.default_paths)
    base_dirs += [p for _, p in policy.storage_patterns]
    directories = _with_ancestors(base_dirs, os_style)

    files = []
    for idx, raw in enumerate(data["files"], start=1):
        if not isinstance(raw, dict) or not raw.get("logical_path"):
            raise SchemaViolation(f"file entry {idx} has no logical_path", ["files.logical_path"])
        path = str(raw["logical_path"])
        stamp = raw.get("timestamp", raw.get("virtual_timestamp"))
        if stamp is None:
            raise SchemaViolation(f"file {path!r} has no timestamp", ["files.timestamp"])
        origin = str(raw.get("origin", "authored")).strip().lower().replace(" ", "_").replace("-", "_")
        if origin not in ORIGINS:
            raise SchemaViolation(f"file {path!r} has unknown origin {origin!r}", ["files.origin"])
        mode = str(raw.get("content_mode", "full")).strip().lower()
        if mode not in CONTENT_MODES:
            raise SchemaViolation(f"file {path!r} has unknown content mode {mode!r}", ["files.content_mode"])
        files.append(
            PlannedFile(
                file_id=str(raw.get("file_id") or f"f{idx:03d}"),
                logical_path=path,
                artifact_type=artifact_type_for(path),
                description=str(raw.get("description", "")),
                virtual_timestamp=parse_timestamp(stamp),
                origin=origin,
                content_mode=mode,
            )
        )

    by_path = {f.logical_path: f.file_id for f in files}
    edges = []
    for raw in data.get("edges") or []:
        if not isinstance(raw, dict):
            raise SchemaViolation("edge entries must be objects", ["edges"])
        src = str(raw.get("from", raw.get("from_id", "")))
        dst = str(raw.get("to", raw.get("to_id", "")))
        relation = str(raw.get("relation", "derived_from"))
        if relation not in RELATIONS:
            raise SchemaViolation(f"unknown edge relation {relation!r}", ["edges.relation"])
        edges.append(DependencyEdge(by_path.get(src, src), by_path.get(dst, dst), relation))
    return FilesystemPlan(policy=policy, directories=directories, files=files, edges=edges)


def plan_filesystem(profile: UserProfile, policy: FilesystemPolicy, backend: Backend) -> FilesystemPlan:
    record = ask_json(backend, "fs-planner", "fs_plan", PLAN_INSTRUCTIONS,
                      {"profile": profile.to_dict(), "policy": policy.to_dict()})
    plan = plan_from_record(record, policy)
    fatal = [d for d in validate_plan(plan) if d.severity == FATAL]
    if fatal:
        raise PlanInvalid(fatal)
    return plan


# ---------------------------------------------------------------------------
# validation and ordering
# ---------------------------------------------------------------------------


def validate_plan(plan: Any) -> list[Diagnostic]:
    """Structural checks on a plan. Never raises; problems come back as diagnostics."""
    try:
        return _validate(plan)
    except Exception as exc:  # totality: malformed input is itself a finding
        return [Diagnostic(FATAL, "MalformedPlan", f"{type(exc).__name__}: {exc}")]


def _validate(plan: Any) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    policy = getattr(plan, "policy", None)
    os_style = getattr(policy, "os_style", None)
    system_start = getattr(policy, "system_start", None)
    files = list(getattr(plan, "files", None) or [])
    edges = list(getattr(plan, "edges", None) or [])
    directories = set(getattr(plan, "directories", None) or [])

    if len(files) > MAX_PLAN_FILES:
        out.append(Diagnostic(FATAL, "PlanTooLarge", f"{len(files)} files"))

    for d in sorted(directories, key=str):
        if not is_valid_path(d, os_style):
            out.append(Diagnostic(FATAL, "BadPathSyntax", str(d)))

    ids: dict[str, Any] = {}
    seen_paths: set[str] = set()
    for f in files:
        fid = getattr(f, "file_id", None)
        path = getattr(f, "logical_path", None)
        if fid in ids:
            out.append(Diagnostic(FATAL, "DuplicateFileId", str(fid)))
        ids[fid] = f
        if path in seen_paths or path in directories:
            out.append(Diagnostic(FATAL, "DuplicatePath", str(path)))
        seen_paths.add(path)
        if not is_valid_path(path, os_style):
            out.append(Diagnostic(FATAL, "BadPathSyntax", str(path)))
            continue
        missing = [a for a in ancestor_dirs(path, os_style) if a not in directories]
        if missing:
            out.append(Diagnostic(FATAL, "OrphanDirectory", f"{path} (missing {missing[0]})"))
        stamp = getattr(f, "virtual_timestamp", None)
        if isinstance(stamp, datetime) and isinstance(system_start, datetime) and stamp < system_start:
            out.append(Diagnostic(WARNING, "TimestampBeforeSystemStart", str(fid)))

    good_edges = []
    for e in edges:
        src, dst = getattr(e, "from_id", None), getattr(e, "to_id", None)
        unknown = [x for x in (src, dst) if x not in ids]
        if unknown:
            out.append(Diagnostic(FATAL, "UnknownFileId", f"{src}->{dst} ({unknown[0]})"))
            continue
        if src == dst:
            out.append(Diagnostic(FATAL, "CycleDetected", f"{src}->{dst}"))
            continue
        good_edges.append((src, dst))
        a = getattr(ids[src], "virtual_timestamp", None)
        b = getattr(ids[dst], "virtual_timestamp", None)
        if isinstance(a, datetime) and isinstance(b, datetime) and a > b:
            out.append(Diagnostic(WARNING, "TimestampOrderViolation", f"{src}->{dst}"))

    stuck = _kahn_leftover(list(ids), good_edges)
    if stuck:
        out.append(Diagnostic(FATAL, "CycleDetected", ",".join(sorted(map(str, stuck)))))
    return out


def _kahn_leftover(nodes: list, edges: list[tuple]) -> list:
    indeg = {n: 0 for n in nodes}
    succ: dict[Any, list] = {n: [] for n in nodes}
    for a, b in edges:
        succ[a].append(b)
        indeg[b] += 1
    ready = [n for n, d in indeg.items() if d == 0]
    done = 0
    while ready:
        n = ready.pop()
        done += 1
        for m in succ[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                ready.append(m)
    return [n for n, d in indeg.items() if d > 0] if done < len(nodes) else []


def instantiation_order(plan: FilesystemPlan) -> list[str]:
    """Kahn's algorithm; among ready files the earliest timestamp wins, then the path."""
    files = plan.file_by_id()
    indeg = {fid: 0 for fid in files}
    succ: dict[str, list[str]] = {fid: [] for fid in files}
    for e in plan.edges:
        if e.from_id not in files or e.to_id not in files:
            raise PlanInvalid([Diagnostic(FATAL, "UnknownFileId", f"{e.from_id}->{e.to_id}")])
        succ[e.from_id].append(e.to_id)
        indeg[e.to_id] += 1

    def key(fid: str) -> tuple:
        f = files[fid]
        return (f.virtual_timestamp, f.logical_path, fid)

    heap = [key(fid) for fid, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        _, _, fid = heapq.heappop(heap)
        order.append(fid)
        for nxt in succ[fid]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                heapq.heappush(heap, key(nxt))
    if len(order) != len(files):
        stuck = sorted(fid for fid, d in indeg.items() if d > 0)
        raise CycleDetected(f"dependency cycle among {stuck}")
    return order
