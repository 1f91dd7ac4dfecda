"""Turn a filesystem plan into files on disk.

Layout under a computer root::

    drives/<L>/...        Windows-style mounts, one per drive letter
    root/...              the single macOS-style mount
    manifest.json         file_id -> placement and provenance

Every planned file gets a ``<name>.meta.json`` sidecar next to it. Private
collaborator material lives in a separate store that never overlaps the root.
"""

from __future__ import annotations

import calendar
import hashlib
import json
import logging
import math
import os
import urllib.request
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path, PurePosixPath
from typing import Any, Callable, Iterable

from .errors import (
    BackendError,
    BadPathSyntax,
    FetchAndSynthesisFailed,
    FetchError,
    RootMissing,
    RootNotEmpty,
    SchemaViolation,
    ValidationError,
)
from .fsplan import (
    FilesystemPlan,
    PlannedFile,
    format_logical_path,
    format_timestamp,
    instantiation_order,
    parse_logical_path,
    parse_timestamp,
)
from .gateway import Backend, ask_json
from .jsonutil import atomic_write_bytes, read_json, write_json

logger = logging.getLogger(__name__)

SIDECAR_SUFFIX = ".meta.json"
MANIFEST_NAME = "manifest.json"
FALLBACK_ORIGIN = "web_download(fallback=synthesized)"

DOCUMENT_TYPES = ("docx", "pdf", "txt", "png", "other")
SHEET_TYPES = ("xlsx", "csv")
SLIDE_TYPES = ("pptx",)


# ---------------------------------------------------------------------------
# path mapping
# ---------------------------------------------------------------------------


def map_logical_path(logical_path: str, os_style: str) -> str:
    """Logical path -> path relative to the computer root, always '/'-separated."""
    mount, parts = parse_logical_path(logical_path, os_style)
    head = f"drives/{mount}" if os_style == "windows" else "root"
    return "/".join([head, *parts])


def unmap_physical_path(physical: str, os_style: str) -> str:
    parts = physical.split("/")
    if os_style == "windows":
        if len(parts) < 2 or parts[0] != "drives" or len(parts[1]) != 1:
            raise BadPathSyntax(f"{physical!r} is not under drives/<L>")
        logical = format_logical_path(parts[1], parts[2:], os_style)
    elif os_style == "macos":
        if not parts or parts[0] != "root":
            raise BadPathSyntax(f"{physical!r} is not under root/")
        logical = format_logical_path("/", parts[1:], os_style)
    else:
        raise BadPathSyntax(f"unknown os style {os_style!r}")
    parse_logical_path(logical, os_style)
    return logical


def mount_dirs(os_style: str, drives: Iterable[str]) -> list[str]:
    if os_style == "windows":
        return [f"drives/{d}" for d in drives]
    return ["root"]


# ---------------------------------------------------------------------------
# artifact content
# ---------------------------------------------------------------------------


def content_family(artifact_type: str) -> str:
    if artifact_type in SHEET_TYPES:
        return "sheets"
    if artifact_type in SLIDE_TYPES:
        return "slides"
    return "sections"


@dataclass
class ArtifactContent:
    artifact_type: str
    sections: list[tuple[str, str]] | None = None
    sheets: list[tuple[str, list[list[Any]]]] | None = None
    slides: list[tuple[str, list[str]]] | None = None
    raw: bytes | None = None

    def validate(self) -> None:
        filled = [name for name in ("sections", "sheets", "slides", "raw") if getattr(self, name)]
        if len(filled) != 1:
            raise SchemaViolation(f"artifact content must fill exactly one family, got {filled}", ["content"])
        if filled[0] != "raw" and filled[0] != content_family(self.artifact_type):
            raise SchemaViolation(
                f"{self.artifact_type} content must use {content_family(self.artifact_type)}, not {filled[0]}",
                ["content"],
            )

    def to_canonical(self) -> dict:
        if self.sections:
            return {"type": self.artifact_type, "sections": [{"heading": h, "body": b} for h, b in self.sections]}
        if self.sheets:
            return {"type": self.artifact_type, "sheets": [{"name": n, "rows": r} for n, r in self.sheets]}
        if self.slides:
            return {"type": self.artifact_type, "slides": [{"title": t, "bullets": b} for t, b in self.slides]}
        return {"type": self.artifact_type, "raw_sha256": hashlib.sha256(self.raw or b"").hexdigest()}

    def canonical_bytes(self) -> bytes:
        if self.raw is not None:
            return self.raw
        return (json.dumps(self.to_canonical(), ensure_ascii=False, sort_keys=True, indent=1) + "\n").encode("utf-8")

    @classmethod
    def from_record(cls, record: Any, artifact_type: str) -> "ArtifactContent":
        if not isinstance(record, dict):
            raise SchemaViolation("artifact content must be an object", ["content"])
        content = cls(artifact_type=artifact_type)
        try:
            if record.get("sections"):
                content.sections = [(str(s["heading"]), str(s["body"])) for s in record["sections"]]
            if record.get("sheets"):
                content.sheets = [(str(s["name"]), [list(r) for r in s["rows"]]) for s in record["sheets"]]
            if record.get("slides"):
                content.slides = [(str(s["title"]), [str(b) for b in s["bullets"]]) for s in record["slides"]]
        except (KeyError, TypeError) as exc:
            raise SchemaViolation(f"malformed artifact content ({exc})", ["content"]) from None
        content.validate()
        return content


def stub_content(artifact_type: str, description: str) -> ArtifactContent:
    family = content_family(artifact_type)
    text = description or "placeholder"
    if family == "sheets":
        return ArtifactContent(artifact_type, sheets=[("Sheet1", [["note"], [text]])])
    if family == "slides":
        return ArtifactContent(artifact_type, slides=[("Overview", [text])])
    return ArtifactContent(artifact_type, sections=[("Summary", text)])


Renderer = Callable[[ArtifactContent], bytes]
RENDERERS: dict[str, Renderer] = {}


def register_renderer(artifact_type: str, renderer: Renderer) -> None:
    """Install a format-specific emitter; the canonical text form is used otherwise."""
    RENDERERS[artifact_type] = renderer


def render(content: ArtifactContent) -> bytes:
    if content.raw is not None:
        return content.raw
    renderer = RENDERERS.get(content.artifact_type)
    return renderer(content) if renderer else content.canonical_bytes()


# ---------------------------------------------------------------------------
# fetchers
# ---------------------------------------------------------------------------


class NullFetcher:
    """Never finds anything; every download falls back to synthesis."""

    def fetch(self, planned: PlannedFile) -> bytes:
        raise FetchError(f"no fetcher configured for {planned.logical_path}")


class MirrorFetcher:
    """Serves downloads from a local directory, matched by file name."""

    def __init__(self, mirror_dir: Path):
        self.mirror_dir = Path(mirror_dir)

    def fetch(self, planned: PlannedFile) -> bytes:
        name = planned.logical_path.rsplit("/", 1)[-1]
        candidate = self.mirror_dir / name
        if candidate.is_file() and candidate.resolve().parent == self.mirror_dir.resolve():
            return candidate.read_bytes()
        raise FetchError(f"{name} is not in the mirror")


class HttpFetcher:
    """Opt-in network fetcher; only logical paths listed in ``url_map`` are retrieved."""

    def __init__(self, url_map: dict[str, str], timeout: float = 30.0):
        self.url_map = dict(url_map)
        self.timeout = timeout

    def fetch(self, planned: PlannedFile) -> bytes:
        url = self.url_map.get(planned.logical_path)
        if not url:
            raise FetchError(f"no URL known for {planned.logical_path}")
        try:
            with urllib.request.urlopen(url, timeout=self.timeout) as resp:
                return resp.read()
        except OSError as exc:
            raise FetchError(f"fetching {url} failed: {exc}") from exc


# ---------------------------------------------------------------------------
# computer
# ---------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    logical_path: str
    physical_path: str
    virtual_timestamp: datetime
    origin: str
    byte_size: int
    sha256: str

    def to_dict(self) -> dict:
        return {
            "logical_path": self.logical_path,
            "physical_path": self.physical_path,
            "virtual_timestamp": format_timestamp(self.virtual_timestamp),
            "origin": self.origin,
            "byte_size": self.byte_size,
            "sha256": self.sha256,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ManifestEntry":
        return cls(
            logical_path=data["logical_path"],
            physical_path=data["physical_path"],
            virtual_timestamp=parse_timestamp(data["virtual_timestamp"]),
            origin=data["origin"],
            byte_size=int(data["byte_size"]),
            sha256=data["sha256"],
        )


@dataclass
class SyntheticComputer:
    root: Path
    os_style: str
    drives: list[str]
    manifest: dict[str, ManifestEntry] = field(default_factory=dict)
    private_store: Path | None = None
    trace: list[str] = field(default_factory=list)

    def path_for(self, logical_path: str) -> Path:
        return self.root / map_logical_path(logical_path, self.os_style)

    def by_logical_path(self) -> dict[str, str]:
        return {e.logical_path: fid for fid, e in self.manifest.items()}

    def mounts(self) -> list[Path]:
        return [self.root / m for m in mount_dirs(self.os_style, self.drives)]

    def snapshot(self) -> dict[str, str]:
        """logical path -> sha256, the basis for day-level file diffs."""
        return {e.logical_path: e.sha256 for e in self.manifest.values()}

    def manifest_dict(self) -> dict:
        private = os.path.relpath(self.private_store, self.root) if self.private_store else None
        return {
            "os_style": self.os_style,
            "drives": list(self.drives),
            "private_store": private.replace(os.sep, "/") if private else None,
            "order": list(self.trace),
            "files": {fid: self.manifest[fid].to_dict() for fid in sorted(self.manifest)},
        }

    def save_manifest(self) -> None:
        write_json(self.root / MANIFEST_NAME, self.manifest_dict())

    @classmethod
    def load(cls, root: Path) -> "SyntheticComputer":
        root = Path(root)
        if not (root / MANIFEST_NAME).is_file():
            raise RootMissing(f"{root} has no {MANIFEST_NAME}")
        data = read_json(root / MANIFEST_NAME)
        private = data.get("private_store")
        return cls(
            root=root,
            os_style=data["os_style"],
            drives=list(data["drives"]),
            manifest={fid: ManifestEntry.from_dict(e) for fid, e in data["files"].items()},
            private_store=(root / private).resolve() if private else None,
            trace=list(data.get("order", [])),
        )

    def read_bytes(self, file_id: str) -> bytes:
        return (self.root / self.manifest[file_id].physical_path).read_bytes()

    def summary_lines(self, limit: int = 200) -> list[str]:
        rows = sorted(self.manifest.values(), key=lambda e: e.logical_path)
        out = [f"{e.logical_path} ({e.byte_size} B, {format_timestamp(e.virtual_timestamp)})" for e in rows[:limit]]
        if len(rows) > limit:
            out.append(f"... {len(rows) - limit} more files")
        return out


def virtual_epoch(stamp: datetime) -> int:
    return calendar.timegm(stamp.timetuple())


def set_virtual_mtime(path: Path, stamp: datetime) -> None:
    try:
        t = virtual_epoch(stamp)
        os.utime(path, (t, t))
    except (OSError, OverflowError, ValueError):
        logger.debug("host refused mtime for %s", path)


def _disjoint(a: Path, b: Path) -> bool:
    a, b = a.resolve(), b.resolve()
    return not (a == b or a in b.parents or b in a.parents)


def write_sidecar(path: Path, payload: dict) -> None:
    write_json(path.with_name(path.name + SIDECAR_SUFFIX), payload)


ARTIFACT_INSTRUCTIONS = (
    "Write the full content of the planned file described in the context. Use earlier files it "
    "depends on for consistency. Return JSON with exactly one of: sections[{heading, body}] for "
    "documents, sheets[{name, rows}] for spreadsheets, slides[{title, bullets[]}] for presentations."
)


def _predecessor_context(computer: SyntheticComputer, preds: list[str], budget: int) -> tuple[list[dict], bool]:
    out, used, truncated = [], 0, False
    for pid in preds:
        entry = computer.manifest[pid]
        data = computer.read_bytes(pid)
        text = data.decode("utf-8", "replace")
        room = max(budget - used, 0)
        encoded = text.encode("utf-8")
        if len(encoded) > room:
            text = encoded[:room].decode("utf-8", "ignore")
            truncated = True
        used += len(text.encode("utf-8"))
        out.append({"file_id": pid, "logical_path": entry.logical_path, "content": text})
    return out, truncated


def _synthesize(planned: PlannedFile, plan: FilesystemPlan, preds: list[dict], backend: Backend) -> ArtifactContent:
    record = ask_json(
        backend,
        "artifact-writer",
        "artifact_content",
        ARTIFACT_INSTRUCTIONS,
        {
            "file": planned.to_dict(),
            "family": content_family(planned.artifact_type),
            "os_style": plan.policy.os_style,
            "predecessors": preds,
        },
    )
    return ArtifactContent.from_record(record, planned.artifact_type)


def materialize_computer(
    plan: FilesystemPlan,
    root: Path,
    fetcher: Any,
    backend: Backend,
    private_store: Path | None = None,
    context_budget: int = 16000,
) -> SyntheticComputer:
    root = Path(root)
    if root.exists() and any(root.iterdir()):
        raise RootNotEmpty(f"{root} already has content")
    private_store = Path(private_store) if private_store else root.parent / "private"
    root.mkdir(parents=True, exist_ok=True)
    private_store.mkdir(parents=True, exist_ok=True)
    if not _disjoint(root, private_store):
        raise ValidationError(f"private store {private_store} overlaps computer root {root}")

    os_style = plan.policy.os_style
    computer = SyntheticComputer(root=root, os_style=os_style, drives=list(plan.policy.drive_layout),
                                 private_store=private_store.resolve())
    for mount in computer.mounts():
        mount.mkdir(parents=True, exist_ok=True)
    for d in sorted(plan.directories):
        computer.path_for(d).mkdir(parents=True, exist_ok=True)

    files = plan.file_by_id()
    for fid in instantiation_order(plan):
        planned = files[fid]
        preds = plan.predecessors(fid)
        context, truncated = _predecessor_context(computer, preds, context_budget)
        origin = planned.origin
        if planned.content_mode == "stub":
            content = stub_content(planned.artifact_type, planned.description)
        elif planned.origin == "web_download":
            try:
                content = ArtifactContent(planned.artifact_type, raw=fetcher.fetch(planned))
            except FetchError as fetch_exc:
                logger.info("fetch failed for %s, synthesizing: %s", planned.logical_path, fetch_exc)
                origin = FALLBACK_ORIGIN
                try:
                    content = _synthesize(planned, plan, context, backend)
                except (BackendError, ValidationError) as exc:
                    computer.save_manifest()
                    raise FetchAndSynthesisFailed(
                        f"{planned.logical_path}: fetch failed ({fetch_exc}); synthesis failed ({exc})",
                        computer.manifest_dict(),
                    ) from exc
        else:
            content = _synthesize(planned, plan, context, backend)

        data = render(content)
        target = computer.path_for(planned.logical_path)
        atomic_write_bytes(target, data)
        digest = hashlib.sha256(data).hexdigest()
        write_sidecar(target, {
            "file_id": fid,
            "logical_path": planned.logical_path,
            "artifact_type": planned.artifact_type,
            "origin": origin,
            "virtual_timestamp": format_timestamp(planned.virtual_timestamp),
            "dependencies": preds,
            "description": planned.description,
            "content_mode": planned.content_mode,
            "context_truncated": truncated,
            "sha256": digest,
        })
        set_virtual_mtime(target, planned.virtual_timestamp)
        computer.manifest[fid] = ManifestEntry(
            logical_path=planned.logical_path,
            physical_path=map_logical_path(planned.logical_path, os_style),
            virtual_timestamp=planned.virtual_timestamp,
            origin=origin,
            byte_size=len(data),
            sha256=digest,
        )
        computer.trace.append(fid)
    computer.save_manifest()
    return computer


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def lower_median(values: list[float]) -> float:
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def nearest_rank(values: list[float], pct: float) -> float:
    ordered = sorted(values)
    rank = max(1, math.ceil(pct / 100.0 * len(ordered)))
    return ordered[rank - 1]


@dataclass
class ComputerStats:
    file_count: int
    directory_count: int
    avg_directory_depth: float
    max_directory_depth: int
    type_distribution: dict[str, tuple[int, float]]
    size_stats: dict[str, tuple[float, float, float]]

    def to_dict(self) -> dict:
        return {
            "file_count": self.file_count,
            "directory_count": self.directory_count,
            "avg_directory_depth": self.avg_directory_depth,
            "max_directory_depth": self.max_directory_depth,
            "type_distribution": {k: {"count": c, "percentage": p} for k, (c, p) in sorted(self.type_distribution.items())},
            "size_stats": {k: {"mean_kb": a, "median_kb": b, "p95_kb": c} for k, (a, b, c) in sorted(self.size_stats.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ComputerStats":
        return cls(
            file_count=int(data["file_count"]),
            directory_count=int(data["directory_count"]),
            avg_directory_depth=float(data["avg_directory_depth"]),
            max_directory_depth=int(data["max_directory_depth"]),
            type_distribution={k: (int(v["count"]), float(v["percentage"])) for k, v in data["type_distribution"].items()},
            size_stats={k: (float(v["mean_kb"]), float(v["median_kb"]), float(v["p95_kb"])) for k, v in data["size_stats"].items()},
        )


def extension_of(name: str) -> str:
    if "." not in name.lstrip("."):
        return "(none)"
    return name.rsplit(".", 1)[-1].lower()


def computer_stats(computer: SyntheticComputer | Path) -> ComputerStats:
    root = computer.root if isinstance(computer, SyntheticComputer) else Path(computer)
    if not root.is_dir():
        raise RootMissing(f"{root} does not exist")
    mounts: list[Path] = []
    if (root / "drives").is_dir():
        mounts += sorted(p for p in (root / "drives").iterdir() if p.is_dir())
    if (root / "root").is_dir():
        mounts.append(root / "root")

    depths: list[int] = []
    sizes: dict[str, list[int]] = {}
    for mount in mounts:
        for dirpath, dirnames, filenames in os.walk(mount):
            dirnames.sort()
            rel = PurePosixPath(Path(dirpath).relative_to(mount).as_posix())
            depth = 0 if str(rel) == "." else len(rel.parts)
            if depth > 0:
                depths.append(depth)
            for name in filenames:
                if name.endswith(SIDECAR_SUFFIX):
                    continue
                full = Path(dirpath) / name
                if not full.is_file():
                    continue
                sizes.setdefault(extension_of(name), []).append(full.stat().st_size)

    total = sum(len(v) for v in sizes.values())
    distribution = {ext: (len(v), 100.0 * len(v) / total) for ext, v in sizes.items()}
    size_stats = {}
    for ext, values in sizes.items():
        kb = [v / 1024.0 for v in values]
        size_stats[ext] = (sum(kb) / len(kb), lower_median(kb), nearest_rank(kb, 95))
    return ComputerStats(
        file_count=total,
        directory_count=len(depths),
        avg_directory_depth=(sum(depths) / len(depths)) if depths else 0.0,
        max_directory_depth=max(depths) if depths else 0,
        type_distribution=distribution,
        size_stats=size_stats,
    )
