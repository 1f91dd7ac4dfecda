"""Run-store persistence: one directory tree per run, write-once stages, validated loads."""

from __future__ import annotations

import json
import secrets
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

from .errors import SCSError, StageAlreadyComplete, StageMissing, ValidationFailed
from .jsonutil import atomic_write_text, dumps, dumps_line, read_json

MARKER = ".stages.json"


def _persona(payload: Any) -> None:
    from .profile import Persona

    if not isinstance(payload, str):
        raise TypeError("persona must be text")
    Persona("persona", payload).validate()


def _profile(payload: Any) -> None:
    from .profile import UserProfile

    UserProfile.from_dict(payload).validate()


def _policy(payload: Any) -> None:
    from .fsplan import FilesystemPolicy

    FilesystemPolicy.from_dict(payload)


def _plan(payload: Any) -> None:
    from .fsplan import FilesystemPlan, validate_plan

    fatal = [d.code for d in validate_plan(FilesystemPlan.from_dict(payload)) if d.severity == "fatal"]
    if fatal:
        raise ValueError(f"plan has fatal diagnostics {fatal}")


def _manifest(payload: Any) -> None:
    for key in ("os_style", "drives", "files"):
        if key not in payload:
            raise KeyError(key)
    from .materialize import ManifestEntry

    for entry in payload["files"].values():
        ManifestEntry.from_dict(entry)


def _objectives(payload: Any) -> None:
    from .setup import ObjectiveSet

    ObjectiveSet.from_dict(payload)


def _collaborators(payload: Any) -> None:
    from .setup import CollaboratorSet

    if not payload["collaborators"]:
        raise ValueError("no collaborators")
    CollaboratorSet.load(payload, None)


def _simulation(payload: Any) -> None:
    for key in ("run_id", "days", "total_turns", "final_manifest"):
        if key not in payload:
            raise KeyError(key)


def _telemetry(payload: Any) -> None:
    from .engine.telemetry import RunTelemetry

    tel = RunTelemetry.from_dict(payload)
    if tel.turns_total != tel.turns_weekly_planning + tel.turns_daily_execution:
        raise ValueError("turn totals do not add up")


def _stats(payload: Any) -> None:
    from .materialize import ComputerStats

    ComputerStats.from_dict(payload)


def _rubric(payload: Any) -> None:
    from .evaluate import Rubric

    Rubric.from_dict(payload)


def _score(payload: Any) -> None:
    from .evaluate import ScoreReport

    report = ScoreReport.from_dict(payload)
    if report.aggregate[0] != sum(report.per_item.values()):
        raise ValueError("aggregate does not match per-item awards")


def _retrospective(payload: Any) -> None:
    from .evaluate import SECTION_KEYS, RetrospectiveReport

    report = RetrospectiveReport.from_index(payload)
    missing = [k for k in SECTION_KEYS if k not in report.sections]
    if missing:
        raise ValueError(f"missing sections {missing}")


def _experience(payload: Any) -> None:
    from .experience import ExperienceItem

    if not isinstance(payload, list) or not payload:
        raise ValueError("no experience items")
    for row in payload:
        ExperienceItem.from_dict(row)


@dataclass(frozen=True)
class StageSpec:
    name: str
    relpath: str
    requires: tuple[str, ...]
    validate: Callable[[Any], None]

    @property
    def kind(self) -> str:
        if self.relpath.endswith(".txt"):
            return "text"
        return "jsonl" if self.relpath.endswith(".jsonl") else "json"


STAGES: dict[str, StageSpec] = {s.name: s for s in (
    StageSpec("persona", "persona.txt", (), _persona),
    StageSpec("profile", "profile.json", ("persona",), _profile),
    StageSpec("policy", "policy.json", ("profile",), _policy),
    StageSpec("plan", "plan.json", ("policy",), _plan),
    StageSpec("computer", "computer/manifest.json", ("plan",), _manifest),
    StageSpec("stats_pre", "stats_pre.json", ("computer",), _stats),
    StageSpec("objectives", "objectives.json", ("computer",), _objectives),
    StageSpec("collaborators", "collaborators.json", ("objectives",), _collaborators),
    StageSpec("simulation", "simulation.json", ("collaborators",), _simulation),
    StageSpec("telemetry", "telemetry.json", ("simulation",), _telemetry),
    StageSpec("stats_post", "stats_post.json", ("simulation",), _stats),
    StageSpec("rubric", "eval/rubric.json", ("simulation",), _rubric),
    StageSpec("score", "eval/score.json", ("simulation",), _score),
    StageSpec("retrospective", "eval/retrospective.index.json", ("score",), _retrospective),
    StageSpec("experience", "experience/items.jsonl", ("retrospective",), _experience),
)}


def new_run_id(now: datetime | None = None) -> str:
    """Timestamp plus a random suffix so parallel launches never collide."""
    now = now or datetime.now(timezone.utc)
    return f"{now:%Y%m%dT%H%M%S}-{secrets.token_hex(3)}"


def _spec(stage: str) -> StageSpec:
    if stage not in STAGES:
        raise StageMissing(f"unknown stage {stage!r}")
    return STAGES[stage]


def _encode(spec: StageSpec, payload: Any) -> str:
    if hasattr(payload, "to_dict"):
        payload = payload.to_dict()
    if spec.kind == "text":
        return payload if payload.endswith("\n") else payload + "\n"
    if spec.kind == "jsonl":
        return "".join(dumps_line(r.to_dict() if hasattr(r, "to_dict") else r) for r in payload)
    return dumps(payload)


def _decode(spec: StageSpec, text: str) -> Any:
    if spec.kind == "text":
        return text
    if spec.kind == "jsonl":
        return [json.loads(line) for line in text.splitlines() if line.strip()]
    return json.loads(text)


class RunStore:
    def __init__(self, root: Path):
        self.root = Path(root)

    def path(self, stage: str) -> Path:
        return self.root / _spec(stage).relpath

    # completion markers -------------------------------------------------

    def completed(self) -> list[str]:
        marker = self.root / MARKER
        if not marker.exists():
            return []
        return list(read_json(marker).get("completed", []))

    def is_complete(self, stage: str) -> bool:
        return stage in self.completed() and self.path(stage).exists()

    def _record(self, stage: str) -> None:
        done = set(self.completed()) | {stage}
        order = [s for s in STAGES if s in done]
        atomic_write_text(self.root / MARKER, dumps({"completed": order}))

    def check_ready(self, stage: str, force: bool = False) -> None:
        """Raise unless ``stage`` may be (re)written now."""
        spec = _spec(stage)
        missing = [r for r in spec.requires if not self.is_complete(r)]
        if missing:
            raise StageMissing(f"stage {stage} needs {', '.join(missing)} first")
        if not force and self.is_complete(stage):
            raise StageAlreadyComplete(f"stage {stage} already complete at {self.path(stage)}; use --force")

    # save / load -------------------------------------------------------

    def save(self, stage: str, payload: Any, force: bool = False) -> Path:
        spec = _spec(stage)
        self.check_ready(stage, force)
        text = _encode(spec, payload)
        path = self.path(stage)
        try:
            spec.validate(_decode(spec, text))
        except (SCSError, KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ValidationFailed(path, f"{type(exc).__name__}: {exc}") from None
        atomic_write_text(path, text)
        self._record(stage)
        return path

    def mark(self, stage: str, force: bool = False) -> Path:
        """Validate an output another component already wrote in place, then record it."""
        self.check_ready(stage, force)
        self.load_unchecked(stage)
        self._record(stage)
        return self.path(stage)

    def load_unchecked(self, stage: str) -> Any:
        spec = _spec(stage)
        path = self.path(stage)
        if not path.exists():
            raise StageMissing(f"stage {stage} has no output at {path}")
        try:
            payload = _decode(spec, path.read_text(encoding="utf-8"))
            spec.validate(payload)
        except (SCSError, KeyError, TypeError, ValueError, AttributeError, UnicodeDecodeError) as exc:
            raise ValidationFailed(path, f"{type(exc).__name__}: {exc}") from None
        return payload

    def load(self, stage: str) -> Any:
        if not self.is_complete(stage):
            raise StageMissing(f"stage {stage} is not complete in {self.root}")
        return self.load_unchecked(stage)


def save_stage(store: RunStore, stage_name: str, payload: Any, force: bool = False) -> Path:
    return store.save(stage_name, payload, force)


def load_stage(store: RunStore, stage_name: str) -> Any:
    return store.load(stage_name)
