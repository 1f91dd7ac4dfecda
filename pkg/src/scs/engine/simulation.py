"""Weekly planning and daily execution over a synthetic computer."""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
import shutil
import time as wallclock
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Any

from ..errors import BackendUnavailable, BudgetExhausted, ConfigError, SchemaViolation
from ..fsplan import format_timestamp, parse_logical_path
from ..gateway import Backend, GenerationRequest, ToolCall, ask_json, complete
from ..jsonutil import append_jsonl, build_prompt, parse_json_text, write_json, write_jsonl
from ..materialize import SyntheticComputer
from ..profile import UserProfile
from ..setup import Collaborator, CollaboratorSet, ObjectiveSet
from ..workdays import is_working_day, week_groups, working_days
from .clock import VirtualClock
from .telemetry import compute_telemetry
from .tools import PRIVATE_PREFIX, USER, Message, SimState, render_inbox, run_tool

logger = logging.getLogger(__name__)

ACTIVITY_KINDS = ("deep_work", "review", "admin", "outreach", "email")
TOOL_NAMES = ("list_dir", "read_file", "write_file", "send_message", "check_inbox",
              "save_attachment", "log_activity", "finish_day")


@dataclass
class SimulationConfig:
    working_days: int | None = None
    seed: int = 0
    per_day_turn_budget: int = 400
    global_turn_budget: int = 5000
    blank_guard: bool = True
    skills: list[str] = field(default_factory=list)
    skill_flag: str | None = None
    activity_tail: int = 20
    run_id: str = "run"

    def validate(self, objectives: ObjectiveSet) -> int:
        days = self.working_days if self.working_days is not None else objectives.working_days
        if not isinstance(days, int) or days < 1:
            raise ConfigError("working_days must be a positive integer")
        if self.per_day_turn_budget < 1 or self.global_turn_budget < 1:
            raise ConfigError("turn budgets must be positive")
        return days

    def to_dict(self) -> dict:
        return {
            "working_days": self.working_days,
            "seed": self.seed,
            "per_day_turn_budget": self.per_day_turn_budget,
            "global_turn_budget": self.global_turn_budget,
            "blank_guard": self.blank_guard,
            "skills": len(self.skills),
            "skill_flag": self.skill_flag,
        }


@dataclass
class Activity:
    date: date
    time: str
    kind: str
    description: str
    creates: list[str] = field(default_factory=list)
    consults: list[str] = field(default_factory=list)
    contacts: list[str] = field(default_factory=list)
    deliverable_id: str | None = None

    def to_dict(self) -> dict:
        return {
            "date": self.date.isoformat(),
            "time": self.time,
            "kind": self.kind,
            "description": self.description,
            "creates": list(self.creates),
            "consults": list(self.consults),
            "contacts": list(self.contacts),
            "deliverable_id": self.deliverable_id,
        }


@dataclass
class WeeklyPlan:
    week_index: int
    focus: str
    activities: list[Activity]
    turns: list[dict] = field(default_factory=list)

    def for_day(self, day: date) -> list[Activity]:
        return [a for a in self.activities if a.date == day]

    def to_dict(self) -> dict:
        return {
            "week_index": self.week_index,
            "focus": self.focus,
            "activities": [a.to_dict() for a in self.activities],
            "turns": self.turns,
        }


@dataclass
class DayRecord:
    date: date
    turns: list[dict]
    activity_log: list[dict]
    messages_sent: list[str]
    messages_received: list[str]
    file_diff: tuple[list[str], list[str]]
    truncated: bool = False

    def to_dict(self) -> dict:
        return {
            "date": self.date.isoformat(),
            "turn_count": len(self.turns),
            "error_turns": sum(1 for t in self.turns if t["error"]),
            "truncated": self.truncated,
            "messages_sent": self.messages_sent,
            "messages_received": self.messages_received,
            "file_diff": {"added": self.file_diff[0], "modified": self.file_diff[1]},
            "activity_entries": len(self.activity_log),
        }


@dataclass
class SimulationRecord:
    run_id: str
    weekly_plans: list[WeeklyPlan]
    days: list[DayRecord]
    final_manifest: dict
    telemetry: Any = None
    truncated: bool = False


@dataclass
class RunContext:
    """Per-run state threaded through planning, daily sessions and collaborator replies."""

    profile: UserProfile
    objectives: ObjectiveSet
    state: SimState
    config: SimulationConfig
    backend: Backend
    total_turns: int = 0


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

_TIME_RE = re.compile(r"^(\d{1,2}):(\d{2})$")


def _norm_time(value: Any) -> str:
    match = _TIME_RE.match(str(value).strip())
    if not match or int(match.group(1)) > 23 or int(match.group(2)) > 59:
        raise SchemaViolation(f"bad time of day {value!r}", ["activities.time"])
    return f"{int(match.group(1)):02d}:{match.group(2)}"


def _norm_kind(value: Any) -> str:
    kind = str(value).strip().lower().replace(" ", "_").replace("-", "_")
    if kind not in ACTIVITY_KINDS:
        raise SchemaViolation(f"unknown activity kind {value!r}", ["activities.kind"])
    return kind


def file_diff(before: dict[str, str], after: dict[str, str]) -> tuple[list[str], list[str]]:
    added = sorted(p for p in after if p not in before)
    modified = sorted(p for p in after if p in before and before[p] != after[p])
    return added, modified


def reply_latency_draw(seed: int, message_id: str, lo: float, hi: float) -> timedelta:
    """Order-independent draw: each message gets its own generator."""
    material = hashlib.sha256(f"{seed}:{message_id}".encode("utf-8")).digest()
    rng = random.Random(int.from_bytes(material[:8], "big"))
    hours = rng.uniform(lo, hi)
    return timedelta(minutes=round(hours * 60))


def _profile_brief(profile: UserProfile) -> dict:
    return {
        "name": profile.identity.full_name,
        "username": profile.identity.username,
        "occupation": profile.occupation,
        "organization": profile.organization,
        "projects": profile.current_projects,
    }


def _collab_brief(collaborators: CollaboratorSet) -> list[dict]:
    return [{"id": c.collab_id, "name": c.name, "relationship": c.relationship,
             "style": c.communication_style} for c in collaborators.collaborators]


def work_system_context(ctx: RunContext) -> str:
    parts = [
        "You are the computer's user, working through your objectives one day at a time.",
        "Tools: " + ", ".join(TOOL_NAMES) + ". Call finish_day when the day's work is done.",
        "Profile: " + json.dumps(_profile_brief(ctx.profile), sort_keys=True, ensure_ascii=False),
        "Objectives: " + json.dumps(ctx.objectives.to_dict(), sort_keys=True, ensure_ascii=False),
        "Collaborators: " + json.dumps(_collab_brief(ctx.state.collaborators), sort_keys=True, ensure_ascii=False),
    ]
    for skill in ctx.config.skills:
        parts.append("Skill:\n" + skill)
    return "\n\n".join(parts)


# ---------------------------------------------------------------------------
# weekly planning
# ---------------------------------------------------------------------------

PLAN_INSTRUCTIONS = (
    "Plan the coming work days. Return JSON {focus, activities: [{date (YYYY-MM-DD), time (HH:MM), "
    "kind (deep_work|review|admin|outreach|email), description, creates[], consults[], contacts[], "
    "deliverable_id}]} using only the dates listed in the context."
)


def weekly_plan_from_record(record: Any, week_index: int, week_days: list[date], objectives: ObjectiveSet,
                            collaborators: CollaboratorSet, os_style: str) -> WeeklyPlan:
    if not isinstance(record, dict) or not isinstance(record.get("activities"), list):
        raise SchemaViolation("weekly plan needs an activities list", ["activities"])
    deliverable_ids = set(objectives.by_id())
    activities = []
    for raw in record["activities"]:
        if not isinstance(raw, dict):
            raise SchemaViolation("activities must be objects", ["activities"])
        try:
            day = date.fromisoformat(str(raw.get("date", ""))[:10])
        except ValueError:
            raise SchemaViolation(f"bad activity date {raw.get('date')!r}", ["activities.date"]) from None
        if not is_working_day(day):
            raise SchemaViolation(f"{day} is a non-working day", ["activities.date"])
        if day not in week_days:
            raise SchemaViolation(f"{day} is outside week {week_index}", ["activities.date"])
        did = raw.get("deliverable_id")
        did = str(did) if did not in (None, "") else None
        if did is not None and did not in deliverable_ids:
            raise SchemaViolation(f"unknown deliverable {did!r}", ["activities.deliverable_id"])
        contacts = []
        for ref in raw.get("contacts") or []:
            who = collaborators.resolve(str(ref))
            if who is None:
                raise SchemaViolation(f"unknown contact {ref!r}", ["activities.contacts"])
            contacts.append(who.collab_id)
        creates = [str(p) for p in raw.get("creates") or []]
        for p in creates:
            try:
                parse_logical_path(p, os_style)
            except Exception:
                raise SchemaViolation(f"bad path {p!r}", ["activities.creates"]) from None
        activities.append(Activity(day, _norm_time(raw.get("time", "")), _norm_kind(raw.get("kind", "")),
                                   str(raw.get("description", "")), creates,
                                   [str(p) for p in raw.get("consults") or []], contacts, did))
    by_day: dict[date, list[str]] = {}
    for a in activities:
        by_day.setdefault(a.date, []).append(a.time)
    for day, times in by_day.items():
        if any(b <= a for a, b in zip(times, times[1:])):
            raise SchemaViolation(f"activity times on {day} must strictly increase", ["activities.time"])
    return WeeklyPlan(week_index, str(record.get("focus", "")), activities)


def plan_week(ctx: RunContext, week_index: int, week_days: list[date], backend: Backend) -> WeeklyPlan:
    state = ctx.state
    context = {
        "week_index": week_index,
        "dates": [d.isoformat() for d in week_days],
        "objectives": ctx.objectives.to_dict(),
        "collaborators": _collab_brief(state.collaborators),
        "recent_activity": state.activity_log[-ctx.config.activity_tail:],
        "files": state.computer.summary_lines(),
    }
    request = GenerationRequest(
        role_label="work-agent",
        system_context=work_system_context(ctx),
        messages=(("user", build_prompt(PLAN_INSTRUCTIONS, context)),),
        schema_hint="weekly_plan",
    )
    response = complete(request, backend)
    if response.finish_reason == "backend_error":
        raise BackendUnavailable(response.error or "backend error during planning")
    ctx.total_turns += 1
    plan = weekly_plan_from_record(parse_json_text(response.text), week_index, week_days, ctx.objectives,
                                   state.collaborators, state.computer.os_style)
    plan.turns.append({"index": 0, "role": "work-agent", "phase": "planning", "tool_calls": [], "error": False})
    return plan


# ---------------------------------------------------------------------------
# collaborators
# ---------------------------------------------------------------------------

REPLY_INSTRUCTIONS = (
    "Reply in character to the latest message in the thread. Return JSON {subject, body, attach[]} "
    "where attach lists filenames from your private files that you choose to share."
)


def collaborator_turn(collaborator: Collaborator, pending: list[Message], state: SimState,
                      backend: Backend, seed: int) -> list[Message]:
    replies = []
    private = {f.filename: f.content.canonical_bytes().decode("utf-8", "replace")
               for f in collaborator.private_files}
    for msg in pending:
        msg.deliver_at = msg.sent_at
        thread = [m.to_dict() for m in state.messages
                  if collaborator.collab_id in (m.sender, m.recipient) and m.sent_at <= msg.sent_at]
        record = ask_json(backend, "collaborator", "collaborator_reply", REPLY_INSTRUCTIONS, {
            "you": {"id": collaborator.collab_id, "name": collaborator.name,
                    "relationship": collaborator.relationship, "background": collaborator.background,
                    "style": collaborator.communication_style},
            "private_files": private,
            "thread": thread,
            "message_id": msg.message_id,
        })
        body = str(record.get("body", "")).strip()
        if not body:
            raise SchemaViolation("collaborator reply has an empty body", ["body"])
        attachments = []
        for name in record.get("attach") or []:
            if name not in private:
                raise SchemaViolation(f"{collaborator.name} has no private file {name!r}", ["attach"])
            attachments.append((name, f"{PRIVATE_PREFIX}{collaborator.collab_id}/{name}"))
        lo, hi = collaborator.response_latency
        at = msg.sent_at + reply_latency_draw(seed, msg.message_id, lo, hi)
        reply = Message(
            message_id=state.next_message_id(),
            sender=collaborator.collab_id,
            recipient=USER,
            sent_at=at,
            deliver_at=at,
            subject=str(record.get("subject") or f"Re: {msg.subject}"),
            body=body,
            attachments=attachments,
            in_reply_to=msg.message_id,
        )
        state.messages.append(reply)
        replies.append(reply)
    return replies


# ---------------------------------------------------------------------------
# daily execution
# ---------------------------------------------------------------------------

DAY_INSTRUCTIONS = "A new work day begins. Restore your context from the material below, then work."


def _day_dir(run_dir: Path, day: date) -> Path:
    return run_dir / "days" / day.isoformat()


def _calls_text(calls: tuple[ToolCall, ...]) -> str:
    return json.dumps([c.to_dict() for c in calls], sort_keys=True, ensure_ascii=False)


def run_day(ctx: RunContext, plan: WeeklyPlan, day: date, backend: Backend) -> DayRecord:
    state = ctx.state
    config = ctx.config
    state.clock.start_day(day)
    state.day_finished = False
    state.touched_created.clear()
    state.touched_modified.clear()
    day_dir = _day_dir(state.run_dir, day)
    if day_dir.exists():
        shutil.rmtree(day_dir)
    day_dir.mkdir(parents=True)

    before = state.computer.snapshot()
    log_start = len(state.activity_log)
    sent_start = len(state.messages)
    fresh = [m for m in state.inbox() if m.message_id not in state.surfaced]
    state.surfaced.update(m.message_id for m in fresh)
    received = [m.message_id for m in fresh]

    opening = build_prompt(DAY_INSTRUCTIONS, {
        "date": day.isoformat(),
        "activity_log_tail": state.activity_log[-config.activity_tail:],
        "inbox": render_inbox(fresh),
        "files": state.computer.summary_lines(),
        "today": [a.to_dict() for a in plan.for_day(day)],
    })
    history: list[tuple[str, str]] = [("user", opening)]
    last_results: tuple[tuple[str, str], ...] | None = None
    turns: list[dict] = []
    truncated = False
    system_context = work_system_context(ctx)

    while True:
        if len(turns) >= config.per_day_turn_budget:
            truncated = True
            break
        if ctx.total_turns >= config.global_turn_budget:
            record = _close_day(ctx, day, turns, log_start, sent_start, received, before, truncated=True)
            raise BudgetExhausted(f"global budget of {config.global_turn_budget} turns used up on {day}", record)
        request = GenerationRequest(
            role_label="work-agent",
            system_context=system_context,
            messages=tuple(history),
            tool_results=last_results,
            schema_hint="tool_calls",
            max_turn_budget=config.per_day_turn_budget,
        )
        response = complete(request, backend)
        if response.finish_reason == "backend_error":
            _close_day(ctx, day, turns, log_start, sent_start, received, before, truncated=True)
            raise BackendUnavailable(response.error or "backend error during the day")
        ctx.total_turns += 1
        before_surfaced = set(state.surfaced)
        results = [run_tool(state, call) for call in response.tool_calls]
        received += sorted(state.surfaced - before_surfaced)
        turn = {
            "index": len(turns),
            "role": "work-agent",
            "time": format_timestamp(state.clock.current),
            "tool_calls": [c.to_dict() for c in response.tool_calls],
            "error": any(not r.ok for r in results),
            "results": [r.to_dict() for r in results],
        }
        append_jsonl(day_dir / "turns.jsonl", turn)
        turns.append(turn)
        state.clock.tick()
        if not response.tool_calls or state.day_finished:
            break
        history.append(("assistant", response.text + "\n" + _calls_text(response.tool_calls)))
        last_results = tuple((r.name, r.as_text()) for r in results)
        history.append(("user", "\n".join(f"[{n}] {t}" for n, t in last_results)))

    return _close_day(ctx, day, turns, log_start, sent_start, received, before, truncated)


def _close_day(ctx: RunContext, day: date, turns: list[dict], log_start: int, sent_start: int,
               received: list[str], before: dict[str, str], truncated: bool) -> DayRecord:
    state = ctx.state
    if state.touched_created or state.touched_modified:
        # unlogged work still belongs in the day's record
        state.activity_log.append({
            "time": state.clock.current.strftime("%H:%M"),
            "date": day.isoformat(),
            "text": "(end of day: files changed without a log entry)",
            "files_created": list(state.touched_created),
            "files_modified": list(state.touched_modified),
        })
        state.touched_created.clear()
        state.touched_modified.clear()
    sent = [m.message_id for m in state.messages[sent_start:] if m.sender == USER]
    collaborators = state.collaborators.by_id()
    pending_by: dict[str, list[Message]] = {}
    for m in state.messages:
        if m.sender == USER and m.deliver_at is None:
            pending_by.setdefault(m.recipient, []).append(m)
    for cid in sorted(pending_by):
        collaborator_turn(collaborators[cid], pending_by[cid], state, ctx.backend, ctx.config.seed)

    after = state.computer.snapshot()
    record = DayRecord(
        date=day,
        turns=turns,
        activity_log=state.activity_log[log_start:],
        messages_sent=sent,
        messages_received=received,
        file_diff=file_diff(before, after),
        truncated=truncated,
    )
    day_dir = _day_dir(state.run_dir, day)
    write_jsonl(day_dir / "activity_log.jsonl", record.activity_log)
    if not (day_dir / "turns.jsonl").exists():
        write_jsonl(day_dir / "turns.jsonl", [])
    write_json(day_dir / "day.json", record.to_dict())
    write_jsonl(state.run_dir / "messages.jsonl", [m.to_dict() for m in state.messages])
    state.computer.save_manifest()
    state.clock.finish_day()
    return record


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def load_messages(run_dir: Path) -> list[Message]:
    path = Path(run_dir) / "messages.jsonl"
    if not path.exists():
        return []
    out = []
    with path.open("r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                out.append(Message.from_dict(json.loads(line)))
    return out


def run_simulation(computer: SyntheticComputer, objectives: ObjectiveSet, collaborators: CollaboratorSet,
                   config: SimulationConfig, backend: Backend, profile: UserProfile,
                   run_dir: Path) -> SimulationRecord:
    """Alternate weekly planning and daily sessions across the configured period."""
    days_total = config.validate(objectives)
    run_dir = Path(run_dir)
    for sub in ("weeks", "days", "attachments"):
        if (run_dir / sub).exists():
            shutil.rmtree(run_dir / sub)
    started = wallclock.monotonic()
    calendar_days = working_days(objectives.period_start, days_total)
    clock = VirtualClock.for_period(calendar_days[0], days_total)
    state = SimState(computer=computer, collaborators=collaborators, clock=clock, run_dir=run_dir,
                     blank_guard=config.blank_guard)
    ctx = RunContext(profile=profile, objectives=objectives, state=state, config=config, backend=backend)
    plans: list[WeeklyPlan] = []
    records: list[DayRecord] = []
    truncated = False
    for week_index, week_days in enumerate(week_groups(calendar_days), start=1):
        clock.start_day(week_days[0])
        plan = plan_week(ctx, week_index, week_days, backend)
        write_json(run_dir / "weeks" / f"week_{week_index}.json", plan.to_dict())
        plans.append(plan)
        for day in week_days:
            try:
                record = run_day(ctx, plan, day, backend)
            except BudgetExhausted as exc:
                records.append(exc.record)
                truncated = True
                _finish(run_dir, config, ctx, plans, records, truncated, started)
                exc.record = _record(config, ctx, plans, records, truncated, run_dir)
                raise
            records.append(record)
            truncated = truncated or record.truncated
    _finish(run_dir, config, ctx, plans, records, truncated, started)
    return _record(config, ctx, plans, records, truncated, run_dir)


def _record(config: SimulationConfig, ctx: RunContext, plans: list[WeeklyPlan], records: list[DayRecord],
            truncated: bool, run_dir: Path) -> SimulationRecord:
    return SimulationRecord(
        run_id=config.run_id,
        weekly_plans=plans,
        days=records,
        final_manifest=ctx.state.computer.manifest_dict(),
        telemetry=compute_telemetry(run_dir),
        truncated=truncated,
    )


def _finish(run_dir: Path, config: SimulationConfig, ctx: RunContext, plans: list[WeeklyPlan],
            records: list[DayRecord], truncated: bool, started: float) -> None:
    state = ctx.state
    write_jsonl(run_dir / "messages.jsonl", [m.to_dict() for m in state.messages])
    write_jsonl(run_dir / "shares.jsonl", state.shares)
    state.computer.save_manifest()
    write_json(run_dir / "simulation.json", {
        "run_id": config.run_id,
        "config": config.to_dict(),
        "period_start": ctx.objectives.period_start.isoformat(),
        "weeks": len(plans),
        "days": [r.date.isoformat() for r in records],
        "truncated": truncated,
        "total_turns": ctx.total_turns,
        "final_manifest": state.computer.manifest_dict(),
    })
    elapsed = wallclock.monotonic() - started
    write_json(run_dir / "timing.json", {"wall_clock_seconds": round(elapsed, 3)})
    telemetry = compute_telemetry(run_dir)
    write_json(run_dir / "telemetry.json", telemetry.to_dict())
