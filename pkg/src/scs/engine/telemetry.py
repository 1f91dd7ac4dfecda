"""Run telemetry recomputed from persisted logs, never from in-memory tallies."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..errors import LogCorrupt

# Turn-count totals cover weekly planning and daily execution only; setup-agent
# calls are reported on their own.


@dataclass
class RunTelemetry:
    turns_weekly_planning: int = 0
    turns_daily_execution: int = 0
    turns_total: int = 0
    error_turns: int = 0
    error_rate: float = 0.0
    communications_total: int = 0
    messages_sent: int = 0
    messages_received: int = 0
    setup_turns: int = 0
    wall_clock_seconds: float = 0.0

    @property
    def error_rate_percent(self) -> float:
        return round(100.0 * self.error_rate, 1)

    def to_dict(self) -> dict:
        return {
            "turns_weekly_planning": self.turns_weekly_planning,
            "turns_daily_execution": self.turns_daily_execution,
            "turns_total": self.turns_total,
            "error_turns": self.error_turns,
            "error_rate": self.error_rate,
            "communications_total": self.communications_total,
            "messages_sent": self.messages_sent,
            "messages_received": self.messages_received,
            "setup_turns": self.setup_turns,
            "wall_clock_seconds": self.wall_clock_seconds,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunTelemetry":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


def _read_json(path: Path) -> dict:
    try:
        with path.open("r", encoding="utf-8") as handle:
            return json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise LogCorrupt(f"{path}: {exc}") from None


def _iter_lines(path: Path):
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogCorrupt(f"{path}:{lineno}: {exc.msg}") from None
            if not isinstance(row, dict):
                raise LogCorrupt(f"{path}:{lineno}: expected an object")
            yield lineno, row


def count_turn_log(path: Path) -> tuple[int, int]:
    """(turns, error turns) for one turns.jsonl file."""
    turns = errors = 0
    expected = 0
    for lineno, row in _iter_lines(path):
        if "error" not in row or "index" not in row:
            raise LogCorrupt(f"{path}:{lineno}: turn entry lacks index/error")
        if row["index"] != expected:
            raise LogCorrupt(f"{path}:{lineno}: turn index {row['index']} breaks the 0..n sequence")
        expected += 1
        turns += 1
        errors += bool(row["error"])
    return turns, errors


def compute_telemetry(run_dir: Path) -> RunTelemetry:
    run_dir = Path(run_dir)
    tel = RunTelemetry()
    weeks = run_dir / "weeks"
    if weeks.is_dir():
        for path in sorted(weeks.glob("week_*.json")):
            plan = _read_json(path)
            turns = plan.get("turns")
            if not isinstance(turns, list):
                raise LogCorrupt(f"{path}: missing planning turns")
            tel.turns_weekly_planning += len(turns)
            tel.error_turns += sum(1 for t in turns if t.get("error"))
    days = run_dir / "days"
    if days.is_dir():
        for day_dir in sorted(p for p in days.iterdir() if p.is_dir()):
            log = day_dir / "turns.jsonl"
            if not log.exists():
                raise LogCorrupt(f"{day_dir} has no turns.jsonl")
            turns, errors = count_turn_log(log)
            tel.turns_daily_execution += turns
            tel.error_turns += errors
    messages = run_dir / "messages.jsonl"
    if messages.exists():
        for lineno, row in _iter_lines(messages):
            if "sender" not in row or "recipient" not in row:
                raise LogCorrupt(f"{messages}:{lineno}: message lacks sender/recipient")
            if row["sender"] == "user":
                tel.messages_sent += 1
            elif row["recipient"] == "user":
                tel.messages_received += 1
    tel.communications_total = tel.messages_sent + tel.messages_received
    tel.turns_total = tel.turns_weekly_planning + tel.turns_daily_execution
    tel.error_rate = tel.error_turns / tel.turns_total if tel.turns_total else 0.0
    tel.setup_turns = sum(1 for name in ("objectives.json", "collaborators.json") if (run_dir / name).exists())
    timing = run_dir / "timing.json"
    if timing.exists():
        tel.wall_clock_seconds = float(_read_json(timing).get("wall_clock_seconds", 0.0))
    return tel
