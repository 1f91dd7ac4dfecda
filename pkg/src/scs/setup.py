"""Month-scale objectives and simulated collaborators for one computer."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Any

from .errors import BadPathSyntax, DependencyCycle, SchemaViolation
from .fsplan import artifact_type_for, parse_logical_path
from .gateway import Backend, ask_json
from .jsonutil import atomic_write_bytes, write_json
from .materialize import ArtifactContent, SyntheticComputer, render, write_sidecar
from .profile import UserProfile
from .workdays import first_working_day_on_or_after, week_groups, working_days

logger = logging.getLogger(__name__)

RELATIONSHIPS = ("manager", "peer", "direct_report", "client", "compliance", "external")
MAX_COLLABORATORS = 12
MIN_PERIOD_DAYS = 1

# Checked in order: "direct report" must win over the "director" in manager titles.
_RELATION_KEYWORDS = (
    ("direct_report", ("direct report", "direct_report", "junior", "associate", "analyst", "assistant", "intern")),
    ("compliance", ("compliance", "regulator", "legal", "audit")),
    ("client", ("client", "customer")),
    ("external", ("external", "vendor", "partner", "consultant", "supplier", "contractor")),
    ("manager", ("manager", "director", "supervisor", "boss", "chief", "cio", "ceo", "cfo", "head", "executive", "lead")),
    ("peer", ("peer", "colleague", "teammate", "coworker", "co-worker", "advisor", "specialist")),
)


def map_relationship(text: str) -> str:
    value = str(text or "").strip().lower()
    if value in RELATIONSHIPS:
        return value
    for target, words in _RELATION_KEYWORDS:
        for word in words:
            if re.search(rf"(?<![a-z]){re.escape(word)}(?![a-z])", value):
                return target
    raise SchemaViolation(f"cannot map relationship {text!r}", ["relationship"])


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------


@dataclass
class Deliverable:
    deliverable_id: str
    title: str
    description: str
    target_date: date
    milestones: list[tuple[int, str]]
    expected_artifacts: list[str]
    depends_on: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "deliverable_id": self.deliverable_id,
            "title": self.title,
            "description": self.description,
            "target_date": self.target_date.isoformat(),
            "milestones": [{"week": w, "summary": s} for w, s in self.milestones],
            "expected_artifacts": list(self.expected_artifacts),
            "depends_on": list(self.depends_on),
        }


@dataclass
class ObjectiveSet:
    period_start: date
    working_days: int
    deliverables: list[Deliverable]

    @property
    def days(self) -> list[date]:
        return working_days(self.period_start, self.working_days)

    @property
    def period_end(self) -> date:
        return self.days[-1]

    @property
    def week_count(self) -> int:
        return len(week_groups(self.days))

    def by_id(self) -> dict[str, Deliverable]:
        return {d.deliverable_id: d for d in self.deliverables}

    def to_dict(self) -> dict:
        return {
            "period": {"start": self.period_start.isoformat(), "working_days": self.working_days},
            "deliverables": [d.to_dict() for d in self.deliverables],
        }

    @classmethod
    def from_dict(cls, data: dict, os_style: str | None = None) -> "ObjectiveSet":
        period = data["period"]
        return objectives_from_record(data, date.fromisoformat(period["start"]), int(period["working_days"]), os_style)


def _parse_date(value: Any, field_name: str) -> date:
    try:
        return date.fromisoformat(str(value).strip()[:10])
    except ValueError:
        raise SchemaViolation(f"bad date {value!r}", [field_name]) from None


def _week_index(value: Any) -> int:
    match = re.search(r"\d+", str(value))
    if not match:
        raise SchemaViolation(f"bad milestone week {value!r}", ["milestones"])
    return int(match.group())


def check_acyclic(graph: dict[str, list[str]]) -> None:
    """Raise DependencyCycle if the depends_on relation loops."""
    state: dict[str, int] = {}

    def visit(node: str, trail: list[str]) -> None:
        state[node] = 1
        for dep in graph.get(node, []):
            if state.get(dep) == 1:
                raise DependencyCycle(f"deliverable dependency cycle: {' -> '.join(trail + [node, dep])}")
            if state.get(dep) is None:
                visit(dep, trail + [node])
        state[node] = 2

    for node in sorted(graph):
        if state.get(node) is None:
            visit(node, [])


def objectives_from_record(data: Any, start: date, days: int, os_style: str | None) -> ObjectiveSet:
    if days < MIN_PERIOD_DAYS:
        raise SchemaViolation("period must have at least one working day", ["period"])
    if not isinstance(data, dict) or not isinstance(data.get("deliverables"), list):
        raise SchemaViolation("objectives must carry a deliverables list", ["deliverables"])
    if not data["deliverables"]:
        raise SchemaViolation("at least one deliverable is required", ["deliverables"])
    start = first_working_day_on_or_after(start)
    calendar_days = working_days(start, days)
    end = calendar_days[-1]
    weeks = len(week_groups(calendar_days))

    deliverables = []
    for idx, raw in enumerate(data["deliverables"], start=1):
        if not isinstance(raw, dict):
            raise SchemaViolation("deliverable entries must be objects", ["deliverables"])
        did = str(raw.get("deliverable_id") or raw.get("id") or f"D{idx}")
        target = _parse_date(raw.get("target_date"), "target_date")
        if not start <= target <= end:
            raise SchemaViolation(f"{did} target {target} is outside {start}..{end}", ["target_date"])
        milestones = []
        for m in raw.get("milestones") or []:
            week = _week_index(m.get("week") if isinstance(m, dict) else m[0])
            summary = str(m.get("summary", "") if isinstance(m, dict) else m[1])
            if not 1 <= week <= weeks:
                raise SchemaViolation(f"{did} milestone week {week} outside 1..{weeks}", ["milestones"])
            milestones.append((week, summary))
        artifacts = [str(p) for p in raw.get("expected_artifacts") or []]
        if not artifacts:
            raise SchemaViolation(f"{did} lists no expected artifacts", ["expected_artifacts"])
        if os_style is not None:
            for path in artifacts:
                try:
                    parse_logical_path(path, os_style)
                except BadPathSyntax as exc:
                    raise SchemaViolation(str(exc), ["expected_artifacts"]) from None
        deliverables.append(Deliverable(
            deliverable_id=did,
            title=str(raw.get("title", "")),
            description=str(raw.get("description", "")),
            target_date=target,
            milestones=milestones,
            expected_artifacts=artifacts,
            depends_on=[str(x) for x in raw.get("depends_on") or []],
        ))

    ids = [d.deliverable_id for d in deliverables]
    if len(set(ids)) != len(ids):
        raise SchemaViolation("deliverable ids must be unique", ["deliverable_id"])
    for d in deliverables:
        unknown = [x for x in d.depends_on if x not in ids]
        if unknown:
            raise SchemaViolation(f"{d.deliverable_id} depends on unknown {unknown}", ["depends_on"])
    check_acyclic({d.deliverable_id: d.depends_on for d in deliverables})
    return ObjectiveSet(period_start=start, working_days=days, deliverables=deliverables)


OBJECTIVES_INSTRUCTIONS = (
    "Propose about a month of realistic, valuable work for this user as deliverable work packages. "
    "Return JSON {deliverables: [{deliverable_id, title, description, target_date (YYYY-MM-DD), "
    "milestones[{week, summary}], expected_artifacts[] (logical paths), depends_on[]}]}. "
    "Target dates must fall inside the period given in the context."
)


def default_period_start(computer: SyntheticComputer) -> date:
    """The Monday after the newest file on the computer."""
    stamps = [e.virtual_timestamp for e in computer.manifest.values()]
    latest = max(stamps).date() if stamps else date(2026, 1, 1)
    return latest + timedelta(days=7 - latest.weekday())


def create_objectives(profile: UserProfile, computer: SyntheticComputer, backend: Backend,
                      period_start: date | None = None, working_day_count: int = 20) -> ObjectiveSet:
    if working_day_count < MIN_PERIOD_DAYS:
        raise SchemaViolation("period must have at least one working day", ["period"])
    start = first_working_day_on_or_after(period_start or default_period_start(computer))
    days = working_days(start, working_day_count)
    record = ask_json(backend, "setup-agent", "objectives", OBJECTIVES_INSTRUCTIONS, {
        "profile": profile.to_dict(),
        "period": {"start": start.isoformat(), "end": days[-1].isoformat(), "working_days": working_day_count},
        "files": computer.summary_lines(),
    })
    return objectives_from_record(record, start, working_day_count, computer.os_style)


# ---------------------------------------------------------------------------
# collaborators
# ---------------------------------------------------------------------------


@dataclass
class PrivateFile:
    filename: str
    content: ArtifactContent
    planted_discrepancy: str | None = None


@dataclass
class Collaborator:
    collab_id: str
    name: str
    relationship: str
    background: str
    communication_style: str
    response_latency: tuple[float, float]
    private_files: list[PrivateFile] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "collab_id": self.collab_id,
            "name": self.name,
            "relationship": self.relationship,
            "background": self.background,
            "communication_style": self.communication_style,
            "response_latency": {"min_hours": self.response_latency[0], "max_hours": self.response_latency[1]},
            "private_files": [f.filename for f in self.private_files],
        }


@dataclass
class CollaboratorSet:
    collaborators: list[Collaborator]

    def by_id(self) -> dict[str, Collaborator]:
        return {c.collab_id: c for c in self.collaborators}

    def resolve(self, ref: str) -> Collaborator | None:
        """Look up by id, then by case-insensitive name."""
        ref = str(ref).strip()
        ids = self.by_id()
        if ref in ids:
            return ids[ref]
        for c in self.collaborators:
            if c.name.casefold() == ref.casefold():
                return c
        return None

    def to_dict(self) -> dict:
        return {"collaborators": [c.to_dict() for c in self.collaborators]}

    @classmethod
    def load(cls, data: dict, private_store: Path | None) -> "CollaboratorSet":
        """Rebuild from collaborators.json; private contents are read back from the store."""
        out = []
        for raw in data["collaborators"]:
            files = []
            for name in raw.get("private_files", []):
                content = ArtifactContent(artifact_type_for(name), raw=b"")
                if private_store is not None:
                    content = ArtifactContent(artifact_type_for(name), raw=(Path(private_store) / raw["collab_id"] / name).read_bytes())
                files.append(PrivateFile(name, content))
            lat = raw["response_latency"]
            out.append(Collaborator(raw["collab_id"], raw["name"], raw["relationship"], raw.get("background", ""),
                                    raw.get("communication_style", ""), (float(lat["min_hours"]), float(lat["max_hours"])), files))
        return cls(out)


def slugify(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-") or "x"


def _latency(raw: dict) -> tuple[float, float]:
    value = raw.get("response_latency", raw.get("latency_hours"))
    if isinstance(value, dict):
        pair = (value.get("min_hours", value.get("min")), value.get("max_hours", value.get("max")))
    elif isinstance(value, (list, tuple)) and len(value) == 2:
        pair = tuple(value)
    elif isinstance(value, str):
        nums = re.findall(r"\d+(?:\.\d+)?", value)
        if not nums:
            raise SchemaViolation(f"cannot read latency {value!r}", ["response_latency"])
        pair = (nums[0], nums[-1])
    else:
        raise SchemaViolation("collaborator latency missing", ["response_latency"])
    try:
        lo, hi = float(pair[0]), float(pair[1])
    except (TypeError, ValueError):
        raise SchemaViolation(f"bad latency {value!r}", ["response_latency"]) from None
    if not 0 < lo <= hi:
        raise SchemaViolation(f"latency must satisfy 0 < min <= max, got {lo}..{hi}", ["response_latency"])
    return lo, hi


def collaborators_from_record(data: Any) -> CollaboratorSet:
    if not isinstance(data, dict) or not isinstance(data.get("collaborators"), list):
        raise SchemaViolation("expected a collaborators list", ["collaborators"])
    raw_list = data["collaborators"]
    if not raw_list:
        raise SchemaViolation("minimum 1 collaborator", ["collaborators"])
    if len(raw_list) > MAX_COLLABORATORS:
        logger.warning("clamping %d collaborators to %d", len(raw_list), MAX_COLLABORATORS)
        raw_list = raw_list[:MAX_COLLABORATORS]
    out = []
    for raw in raw_list:
        name = str(raw.get("name", "")).strip()
        if not name:
            raise SchemaViolation("collaborator without a name", ["name"])
        cid = str(raw.get("collab_id") or slugify(name))
        files, seen = [], set()
        for f in raw.get("private_files") or []:
            fname = str(f.get("filename", "")).strip()
            if not fname or "/" in fname or "\\" in fname or fname in (".", ".."):
                raise SchemaViolation(f"bad private filename {fname!r}", ["private_files"])
            if fname in seen:
                raise SchemaViolation(f"duplicate private filename {fname!r} for {name}", ["private_files"])
            seen.add(fname)
            content = ArtifactContent.from_record(f, artifact_type_for(fname))
            files.append(PrivateFile(fname, content, f.get("planted_discrepancy")))
        out.append(Collaborator(
            collab_id=cid,
            name=name,
            relationship=map_relationship(raw.get("relationship", "")),
            background=str(raw.get("background", "")),
            communication_style=str(raw.get("communication_style", "")),
            response_latency=_latency(raw),
            private_files=files,
        ))
    ids = [c.collab_id for c in out]
    if len(set(ids)) != len(ids):
        raise SchemaViolation("collaborator ids must be unique", ["collab_id"])
    if "user" in ids:
        raise SchemaViolation("'user' is reserved", ["collab_id"])
    return CollaboratorSet(out)


COLLABORATOR_INSTRUCTIONS = (
    "Create the small set of people this user works with over the period. Return JSON "
    "{collaborators: [{name, relationship, background, communication_style, "
    "response_latency {min_hours, max_hours}, private_files[{filename, sections|sheets|slides, "
    "planted_discrepancy?}]}]}."
)


def write_private_files(collaborators: CollaboratorSet, private_store: Path) -> None:
    for c in collaborators.collaborators:
        for f in c.private_files:
            target = Path(private_store) / c.collab_id / f.filename
            atomic_write_bytes(target, render(f.content))
            write_sidecar(target, {
                "collab_id": c.collab_id,
                "filename": f.filename,
                "artifact_type": f.content.artifact_type,
                "planted_discrepancy": f.planted_discrepancy,
            })


def create_collaborators(profile: UserProfile, objectives: ObjectiveSet, backend: Backend,
                         computer: SyntheticComputer) -> CollaboratorSet:
    record = ask_json(backend, "setup-agent", "collaborators", COLLABORATOR_INSTRUCTIONS, {
        "profile": profile.to_dict(),
        "objectives": objectives.to_dict(),
    })
    collaborators = collaborators_from_record(record)
    if computer.private_store is None:
        raise SchemaViolation("computer has no private store", ["private_store"])
    write_private_files(collaborators, computer.private_store)
    return collaborators


def save_collaborators(collaborators: CollaboratorSet, path: Path) -> None:
    write_json(path, collaborators.to_dict())
