"""Rubric drafting and merging, judge scoring, and the retrospective report."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import DanglingReference, RootMissing, SchemaViolation, TooFewDrafts
from .gateway import Backend, ask_json
from .jsonutil import atomic_write_text, iter_jsonl, read_json, write_json
from .materialize import SyntheticComputer

logger = logging.getLogger(__name__)

SOURCES = ("spec", "interaction", "expertise", "reference", "quality")
UNASSIGNED = "_unassigned"
ARTIFACT_CHARS = 6000

SECTIONS = (
    ("executive_summary", "Executive Summary"),
    ("per_deliverable_analysis", "Deliverable-by-Deliverable Analysis"),
    ("collaborator_communication_analysis", "Collaborator Communication Analysis"),
    ("workflow_efficiency", "Workflow and Efficiency"),
    ("domain_insights", "Domain-Specific Insights"),
    ("recommendations", "Recommendations"),
    ("score_summary", "Score Summary"),
)
SECTION_KEYS = tuple(k for k, _ in SECTIONS)


# ---------------------------------------------------------------------------
# rubric types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RubricItem:
    item_id: str
    text: str
    points: int
    source: str
    deliverable_id: str | None = None

    def validate(self) -> None:
        if not self.item_id:
            raise SchemaViolation("rubric item without an id", ["item_id"])
        if not self.text.strip():
            raise SchemaViolation(f"rubric item {self.item_id} has no requirement text", ["text"])
        if isinstance(self.points, bool) or not isinstance(self.points, int) or self.points < 1:
            raise SchemaViolation(f"rubric item {self.item_id}: points must be an integer >= 1, got {self.points!r}",
                                  ["points"])
        if self.source not in SOURCES:
            raise SchemaViolation(f"rubric item {self.item_id}: unknown source {self.source!r}", ["source"])

    @property
    def key(self) -> str:
        return self.deliverable_id or UNASSIGNED

    def to_dict(self) -> dict:
        return {"item_id": self.item_id, "text": self.text, "points": self.points,
                "source": self.source, "deliverable_id": self.deliverable_id}


@dataclass
class Rubric:
    items: list[RubricItem]
    provenance: dict[str, list[str]] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    @property
    def total_points(self) -> int:
        return sum(i.points for i in self.items)

    def by_id(self) -> dict[str, RubricItem]:
        return {i.item_id: i for i in self.items}

    def source_mix(self) -> dict[str, int]:
        mix = {s: 0 for s in SOURCES}
        for item in self.items:
            mix[item.source] += 1
        return mix

    def validate(self) -> None:
        if not self.items:
            raise SchemaViolation("rubric has no items", ["items"])
        seen: set[str] = set()
        for item in self.items:
            item.validate()
            if item.item_id in seen:
                raise SchemaViolation(f"duplicate rubric item id {item.item_id}", ["item_id"])
            seen.add(item.item_id)

    def to_dict(self) -> dict:
        out = {"items": [i.to_dict() for i in self.items], "total_points": self.total_points}
        if self.provenance:
            out["provenance"] = {k: list(v) for k, v in sorted(self.provenance.items())}
        if self.flags:
            out["flags"] = list(self.flags)
        return out

    @classmethod
    def from_dict(cls, data: Any) -> "Rubric":
        rubric = rubric_from_record(data)
        if isinstance(data, dict) and "total_points" in data and data["total_points"] != rubric.total_points:
            raise SchemaViolation(f"total_points {data['total_points']} != item sum {rubric.total_points}",
                                  ["total_points"])
        if isinstance(data, dict):
            rubric.provenance = {k: list(v) for k, v in (data.get("provenance") or {}).items()}
            rubric.flags = list(data.get("flags") or [])
        return rubric


def _item_from_record(raw: Any, fallback_id: str) -> RubricItem:
    if not isinstance(raw, dict):
        raise SchemaViolation("rubric item must be an object", ["items"])
    points = raw.get("points")
    if isinstance(points, float) and points.is_integer():
        points = int(points)
    deliverable = raw.get("deliverable_id")
    item = RubricItem(
        item_id=str(raw.get("item_id") or raw.get("id") or fallback_id),
        text=str(raw.get("text") or raw.get("requirement") or ""),
        points=points,
        source=str(raw.get("source", "")).strip().lower(),
        deliverable_id=str(deliverable) if deliverable not in (None, "") else None,
    )
    item.validate()
    return item


def rubric_from_record(data: Any) -> Rubric:
    if not isinstance(data, dict) or not isinstance(data.get("items"), list):
        raise SchemaViolation("rubric record needs an items list", ["items"])
    items = [_item_from_record(raw, f"r{n:03d}") for n, raw in enumerate(data["items"], start=1)]
    rubric = Rubric(items)
    rubric.validate()
    return rubric


# ---------------------------------------------------------------------------
# run-store view
# ---------------------------------------------------------------------------


@dataclass
class RunView:
    """Read-only view of the parts of a finished run the judge looks at."""

    run_dir: Path
    objectives: dict
    collaborators: dict
    messages: list[dict]
    computer: SyntheticComputer | None
    telemetry: dict

    @classmethod
    def load(cls, run_dir: Path) -> "RunView":
        run_dir = Path(run_dir)
        if not (run_dir / "objectives.json").is_file():
            raise RootMissing(f"{run_dir} has no objectives.json")
        collab_path = run_dir / "collaborators.json"
        messages = list(iter_jsonl(run_dir / "messages.jsonl")) if (run_dir / "messages.jsonl").exists() else []
        computer = SyntheticComputer.load(run_dir / "computer") if (run_dir / "computer").is_dir() else None
        telemetry = read_json(run_dir / "telemetry.json") if (run_dir / "telemetry.json").exists() else {}
        return cls(run_dir, read_json(run_dir / "objectives.json"),
                   read_json(collab_path) if collab_path.exists() else {"collaborators": []},
                   messages, computer, telemetry)

    @property
    def deliverable_ids(self) -> list[str]:
        return [d["deliverable_id"] for d in self.objectives.get("deliverables", [])]

    def artifact_text(self, logical_path: str) -> str | None:
        if self.computer is None:
            return None
        fid = self.computer.by_logical_path().get(logical_path)
        if fid is None:
            return None
        data = self.computer.read_bytes(fid)
        text = data.decode("utf-8", errors="replace")
        return text[:ARTIFACT_CHARS]

    def deliverable_contents(self) -> list[dict]:
        out = []
        for d in self.objectives.get("deliverables", []):
            artifacts = []
            for path in d.get("expected_artifacts", []):
                text = self.artifact_text(path)
                artifacts.append({"path": path, "present": text is not None, "content": text or ""})
            out.append({"deliverable_id": d["deliverable_id"], "title": d.get("title", ""), "artifacts": artifacts})
        return out

    def collaborator_expectations(self) -> list[dict]:
        return [{"id": c["collab_id"], "name": c["name"], "relationship": c["relationship"],
                 "background": c.get("background", ""), "style": c.get("communication_style", "")}
                for c in self.collaborators.get("collaborators", [])]

    def message_digest(self) -> list[dict]:
        return [{"id": m["message_id"], "from": m["sender"], "to": m["recipient"], "sent_at": m["sent_at"],
                 "subject": m.get("subject", ""), "body": m.get("body", "")[:400],
                 "attachments": [a["filename"] for a in m.get("attachments", [])]} for m in self.messages]


# ---------------------------------------------------------------------------
# drafting and merging
# ---------------------------------------------------------------------------


def draft_rubric(run_dir: Path, backend: Backend, draft_index: int = 1) -> Rubric:
    """One judge pass proposing what a good outcome for this run must satisfy."""
    view = RunView.load(run_dir)
    context = {
        "draft_index": draft_index,
        "objectives": view.objectives,
        "collaborators": view.collaborator_expectations(),
        "deliverables": view.deliverable_contents(),
        "sources": list(SOURCES),
    }
    data = ask_json(backend, "judge", "rubric",
                    "Draft a weighted rubric of requirement items for the final deliverables. Each item has "
                    "item_id, text, integer points >= 1, source (one of the listed tags) and deliverable_id.",
                    context)
    return rubric_from_record(data)


def save_draft(rubric: Rubric, eval_dir: Path, draft_index: int) -> Path:
    path = Path(eval_dir) / "rubric_drafts" / f"draft_{draft_index}.json"
    write_json(path, rubric.to_dict())
    return path


def merge_rubrics(drafts: list[Rubric], backend: Backend) -> Rubric:
    """Merge per deliverable key; provenance refs are "<draft number>:<item id>"."""
    if len(drafts) < 2:
        raise TooFewDrafts(f"merging needs at least 2 drafts, got {len(drafts)}")
    refs: dict[str, RubricItem] = {}
    groups: dict[str, dict] = {}
    for k, draft in enumerate(drafts, start=1):
        draft.validate()
        for item in draft.items:
            ref = f"{k}:{item.item_id}"
            refs[ref] = item
            group = groups.setdefault(item.key, {"key": item.key, "drafts": set(), "items": []})
            group["drafts"].add(k)
            group["items"].append({"ref": ref, **item.to_dict()})
    flags = [f"low-coverage:{key}" for key, g in sorted(groups.items()) if len(g["drafts"]) * 2 < len(drafts)]
    context = {
        "draft_count": len(drafts),
        "groups": [{"key": g["key"], "present_in": len(g["drafts"]), "items": g["items"]}
                   for _, g in sorted(groups.items())],
    }
    data = ask_json(backend, "judge", "rubric_merge",
                    "Merge these draft rubrics. Combine items that state the same requirement; keep distinct ones. "
                    "List the draft refs each merged item came from in 'sources'.",
                    context)
    rubric = rubric_from_record({"items": [_strip_sources(raw, n) for n, raw in enumerate(data["items"], start=1)]})
    provenance: dict[str, list[str]] = {}
    for raw, item in zip(data["items"], rubric.items):
        sources = raw.get("sources") if isinstance(raw, dict) else None
        if not isinstance(sources, list) or not sources:
            raise SchemaViolation(f"merged item {item.item_id} has no provenance", ["sources"])
        unknown = [s for s in sources if s not in refs]
        if unknown:
            raise SchemaViolation(f"merged item {item.item_id} cites unknown draft items {unknown}", ["sources"])
        provenance[item.item_id] = sorted(set(map(str, sources)))
    if len(rubric.items) > len(refs):
        raise SchemaViolation(f"merge produced {len(rubric.items)} items from {len(refs)} draft items", ["items"])
    rubric.provenance = provenance
    rubric.flags = flags
    return rubric


def _strip_sources(raw: Any, n: int) -> Any:
    if not isinstance(raw, dict):
        return raw
    out = {k: v for k, v in raw.items() if k != "sources"}
    out.setdefault("item_id", f"m{n:03d}")
    return out


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------


@dataclass
class ScoreReport:
    per_item: dict[str, int]
    per_deliverable: dict[str, tuple[int, int]]
    aggregate: tuple[int, int, float]

    @property
    def percentage(self) -> float:
        return self.aggregate[2]

    def to_dict(self) -> dict:
        awarded, possible, pct = self.aggregate
        return {
            "per_item": dict(sorted(self.per_item.items())),
            "per_deliverable": {k: {"awarded": a, "possible": p} for k, (a, p) in sorted(self.per_deliverable.items())},
            "aggregate": {"awarded": awarded, "possible": possible, "percentage": pct},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScoreReport":
        agg = data["aggregate"]
        return cls(
            per_item={k: int(v) for k, v in data["per_item"].items()},
            per_deliverable={k: (int(v["awarded"]), int(v["possible"])) for k, v in data["per_deliverable"].items()},
            aggregate=(int(agg["awarded"]), int(agg["possible"]), float(agg["percentage"])),
        )


def percentage(awarded: int, possible: int) -> float:
    return 100.0 * awarded / possible if possible else 0.0


def aggregate_scores(rubric: Rubric, per_item: dict[str, int]) -> ScoreReport:
    """Pure arithmetic over per-item awards; the judge never supplies totals."""
    items = rubric.by_id()
    missing = sorted(set(items) - set(per_item))
    if missing:
        raise SchemaViolation(f"no award for rubric items {missing[:10]}", ["awards"])
    extra = sorted(set(per_item) - set(items))
    if extra:
        raise SchemaViolation(f"awards for unknown rubric items {extra[:10]}", ["awards"])
    per_deliverable: dict[str, list[int]] = {}
    for item_id, item in items.items():
        value = per_item[item_id]
        if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value <= item.points:
            raise SchemaViolation(f"award {value!r} for {item_id} outside 0..{item.points}", ["awards"])
        bucket = per_deliverable.setdefault(item.key, [0, 0])
        bucket[0] += value
        bucket[1] += item.points
    awarded = sum(per_item[i] for i in items)
    possible = rubric.total_points
    return ScoreReport(dict(per_item), {k: (a, p) for k, (a, p) in per_deliverable.items()},
                       (awarded, possible, percentage(awarded, possible)))


def _awards_from_record(data: Any) -> dict[str, int]:
    awards = data.get("awards") if isinstance(data, dict) else None
    if isinstance(awards, list):
        out = {}
        for row in awards:
            if not isinstance(row, dict) or "item_id" not in row:
                raise SchemaViolation("award rows need item_id and awarded", ["awards"])
            out[str(row["item_id"])] = row.get("awarded")
        awards = out
    if not isinstance(awards, dict):
        raise SchemaViolation("awards must be a map or list", ["awards"])
    cleaned = {}
    for k, v in awards.items():
        if isinstance(v, float) and v.is_integer():
            v = int(v)
        cleaned[str(k)] = v
    return cleaned


def score_run(rubric: Rubric, run_dir: Path, backend: Backend, persist: bool = True) -> ScoreReport:
    rubric.validate()
    view = RunView.load(run_dir)
    context = {
        "rubric": [i.to_dict() for i in rubric.items],
        "deliverables": view.deliverable_contents(),
        "messages": view.message_digest(),
    }
    data = ask_json(backend, "judge", "rubric_scores",
                    "Score the final deliverables against every rubric item. Return awards: item_id -> integer "
                    "points between 0 and the item's points; partial credit is allowed.",
                    context)
    report = aggregate_scores(rubric, _awards_from_record(data))
    if persist:
        write_json(Path(run_dir) / "eval" / "score.json", report.to_dict())
    return report


# ---------------------------------------------------------------------------
# retrospective
# ---------------------------------------------------------------------------


@dataclass
class Section:
    key: str
    text: str
    evidence: dict[str, list[str]] = field(default_factory=dict)
    points: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"key": self.key, "text": self.text, "points": list(self.points),
                "evidence": {k: list(v) for k, v in sorted(self.evidence.items())}}


@dataclass
class RetrospectiveReport:
    run_id: str
    sections: dict[str, Section]
    score: ScoreReport

    def to_index(self) -> dict:
        return {
            "run_id": self.run_id,
            "sections": [self.sections[k].to_dict() for k in SECTION_KEYS],
            "score": self.score.to_dict(),
        }

    @classmethod
    def from_index(cls, data: dict) -> "RetrospectiveReport":
        sections = {}
        for raw in data["sections"]:
            sections[raw["key"]] = Section(raw["key"], raw["text"], {k: list(v) for k, v in raw["evidence"].items()},
                                           list(raw.get("points", [])))
        return cls(data["run_id"], sections, ScoreReport.from_dict(data["score"]))

    def to_markdown(self) -> str:
        lines = [f"# Retrospective: {self.run_id}", ""]
        for n, (key, title) in enumerate(SECTIONS, start=1):
            section = self.sections[key]
            lines += [f"## {n}. {title}", "", section.text.strip(), ""]
            lines += [f"- {p}" for p in section.points]
            if section.points:
                lines.append("")
            if key == "score_summary":
                lines += _score_table(self.score)
            cited = [f"{kind}: {', '.join(refs)}" for kind, refs in sorted(section.evidence.items()) if refs]
            if cited:
                lines += ["Evidence:", ""] + [f"- {c}" for c in cited] + [""]
        return "\n".join(lines).rstrip() + "\n"


def _score_table(score: ScoreReport) -> list[str]:
    rows = ["| Deliverable | Awarded | Possible | Percent |", "|---|---:|---:|---:|"]
    for key, (a, p) in sorted(score.per_deliverable.items()):
        rows.append(f"| {key} | {a} | {p} | {percentage(a, p):.1f}% |")
    a, p, pct = score.aggregate
    rows.append(f"| Total | {a} | {p} | {pct:.1f}% |")
    return rows + [""]


_TURN_REF = re.compile(r"^(?P<day>\d{4}-\d{2}-\d{2}|week_\d+)#(?P<index>\d+)$")


def _section_from_record(key: str, raw: Any) -> Section:
    if isinstance(raw, str):
        raw = {"text": raw}
    if not isinstance(raw, dict) or not str(raw.get("text", "")).strip():
        raise SchemaViolation(f"section {key} needs non-empty text", [key])
    evidence_raw = raw.get("evidence") or {}
    if not isinstance(evidence_raw, dict):
        raise SchemaViolation(f"section {key}: evidence must be an object", [key])
    evidence = {}
    for kind in ("turns", "messages", "paths"):
        refs = evidence_raw.get(kind) or []
        if not isinstance(refs, list):
            raise SchemaViolation(f"section {key}: evidence.{kind} must be a list", [key])
        evidence[kind] = [str(r) for r in refs]
    points = raw.get("points") or []
    if not isinstance(points, list):
        raise SchemaViolation(f"section {key}: points must be a list", [key])
    return Section(key, str(raw["text"]), evidence, [str(p) for p in points])


def _turn_count(run_dir: Path, where: str) -> int:
    if where.startswith("week_"):
        path = run_dir / "weeks" / f"{where}.json"
        return len(read_json(path).get("turns", [])) if path.exists() else 0
    path = run_dir / "days" / where / "turns.jsonl"
    return sum(1 for _ in iter_jsonl(path)) if path.exists() else 0


def dangling_references(run_dir: Path, sections: dict[str, Section], view: RunView) -> list[str]:
    run_dir = Path(run_dir)
    message_ids = {m["message_id"] for m in view.messages}
    logical = set(view.computer.by_logical_path()) if view.computer else set()
    counts: dict[str, int] = {}
    bad = []
    for key in SECTION_KEYS:
        ev = sections[key].evidence
        for ref in ev.get("messages", []):
            if ref not in message_ids:
                bad.append(f"message {ref}")
        for ref in ev.get("paths", []):
            if ref in logical:
                continue
            rel = Path(ref)
            if not rel.is_absolute() and ".." not in rel.parts and (run_dir / rel).exists():
                continue
            bad.append(f"path {ref}")
        for ref in ev.get("turns", []):
            match = _TURN_REF.match(ref)
            if not match:
                bad.append(f"turn {ref}")
                continue
            where = match["day"]
            if where not in counts:
                counts[where] = _turn_count(run_dir, where)
            if int(match["index"]) >= counts[where]:
                bad.append(f"turn {ref}")
    return bad


def _error_turns(run_dir: Path, limit: int = 50) -> list[dict]:
    out = []
    days = run_dir / "days"
    if not days.is_dir():
        return out
    for day_dir in sorted(p for p in days.iterdir() if p.is_dir()):
        log = day_dir / "turns.jsonl"
        if not log.exists():
            continue
        for turn in iter_jsonl(log):
            if turn.get("error"):
                codes = [r.get("error_code") for r in turn.get("results", []) if not r.get("ok")]
                out.append({"ref": f"{day_dir.name}#{turn['index']}", "codes": codes})
                if len(out) >= limit:
                    return out
    return out


def _day_summaries(run_dir: Path) -> list[dict]:
    days = run_dir / "days"
    if not days.is_dir():
        return []
    return [read_json(d / "day.json") for d in sorted(days.iterdir()) if (d / "day.json").exists()]


def write_retrospective(run_dir: Path, score: ScoreReport, backend: Backend, persist: bool = True) -> RetrospectiveReport:
    run_dir = Path(run_dir)
    view = RunView.load(run_dir)
    sim = read_json(run_dir / "simulation.json") if (run_dir / "simulation.json").exists() else {}
    context = {
        "sections": list(SECTION_KEYS),
        "objectives": view.objectives,
        "collaborators": view.collaborator_expectations(),
        "score": score.to_dict(),
        # wall-clock time varies between otherwise identical runs; keep it out of the request
        "telemetry": {k: v for k, v in view.telemetry.items() if k != "wall_clock_seconds"},
        "days": _day_summaries(run_dir),
        "messages": view.message_digest(),
        "error_turns": _error_turns(run_dir),
        "deliverables": [{"deliverable_id": d["deliverable_id"],
                          "artifacts": [{"path": a["path"], "present": a["present"]} for a in d["artifacts"]]}
                         for d in view.deliverable_contents()],
    }
    data = ask_json(backend, "judge", "retrospective",
                    "Write a retrospective of this run with one entry per listed section. Each section has text, "
                    "optional points, and evidence citing turns (<date>#<index>), message ids and file paths.",
                    context)
    raw_sections = data.get("sections")
    if isinstance(raw_sections, list):
        raw_sections = {str(s.get("key")): s for s in raw_sections if isinstance(s, dict)}
    if not isinstance(raw_sections, dict):
        raise SchemaViolation("sections must be an object keyed by section name", ["sections"])
    missing = [k for k in SECTION_KEYS if k not in raw_sections]
    if missing:
        raise SchemaViolation(f"retrospective is missing sections {missing}", missing)
    sections = {k: _section_from_record(k, raw_sections[k]) for k in SECTION_KEYS}
    bad = dangling_references(run_dir, sections, view)
    if bad:
        raise DanglingReference(f"retrospective cites evidence not in the run store: {bad[:5]}", bad)
    report = RetrospectiveReport(str(sim.get("run_id") or run_dir.name), sections, score)
    if persist:
        atomic_write_text(run_dir / "eval" / "retrospective.md", report.to_markdown())
        write_json(run_dir / "eval" / "retrospective.index.json", report.to_index())
    return report


def load_retrospective(run_dir: Path) -> RetrospectiveReport:
    return RetrospectiveReport.from_index(read_json(Path(run_dir) / "eval" / "retrospective.index.json"))
