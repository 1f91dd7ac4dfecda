"""A small scripted world: every pipeline role answered by deterministic rules.

Used by the scripted backend when no rule file is given, by the end-to-end
tests, and as a worked example of what each role is expected to return.
"""

from __future__ import annotations

import hashlib
import json
import re
from datetime import date
from typing import Any

from .gateway import GenerationRequest, ScriptedRule
from .jsonutil import extract_context

DEMO_PERSONA = (
    "Name: Tomasz Wierzbicki\n"
    "Occupation: Hydrologist\n"
    "Tomasz is a mid-career hydrologist at the Lakeshore Regional Water Authority. He builds the "
    "seasonal runoff forecasts that reservoir operators rely on, keeps gauge records tidy, and "
    "briefs the operations director before each spring melt."
)

_USER = "twierzbicki"
_HOME = f"C:/Users/{_USER}"


def _persona_field(text: str, name: str, default: str) -> str:
    match = re.search(rf"^{name}:\s*(.+)$", text, re.MULTILINE)
    return match.group(1).strip() if match else default


def _context(request: GenerationRequest, position: int = -1) -> dict:
    ctx = extract_context(request.messages[position][1])
    return ctx if isinstance(ctx, dict) else {}


def _pick(*parts: Any) -> int:
    digest = hashlib.sha256("|".join(map(str, parts)).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


# ---------------------------------------------------------------------------
# computer creation
# ---------------------------------------------------------------------------


def profile_reply(request: GenerationRequest) -> dict:
    text = request.last_message
    name = _persona_field(text, "Name", "Alex Morgan")
    occupation = _persona_field(text, "Occupation", "Hydrologist")
    first, _, last = name.partition(" ")
    return {
        "identity": {"full_name": name, "username": (first[:1] + last).lower(), "location": "Lakeshore, Ontario"},
        "occupation": occupation,
        "organization": "Lakeshore Regional Water Authority",
        "career_stage": "Mid-career",
        "responsibilities": ["Seasonal runoff forecasting", "Gauge data quality control", "Operations briefings"],
        "recent_work_history": [{"period": "2024", "summary": "Rebuilt the snowmelt model calibration"}],
        "current_projects": ["2026 spring runoff forecast", "Reservoir operations briefing"],
        "collaborators": [{"name": "Priya Raman", "relationship": "manager"},
                          {"name": "Jonas Feld", "relationship": "peer"}],
        "common_work_products": ["forecast memos", "gauge workbooks", "briefing decks"],
        "technical_level": "high",
        "computer_usage_level": "high",
        "preferred_tools": ["Excel", "Python", "Word"],
        "document_habits": "Drafts in Word, keeps numbered versions",
        "spreadsheet_usage": "Heavy; one workbook per gauge network",
        "attachment_saving": "Saves attachments into a per-project Incoming folder",
        "naming_preferences": "Project prefix, topic, year and a v-number",
        "organization_style": "Project folders on the data drive, a tidy Documents tree, cluttered Downloads",
    }


def policy_reply(request: GenerationRequest) -> dict:
    return {
        "system_start": "2023-03-01 08:15",
        "drive_layout": ["C: (system)", "D: (data)"],
        "default_paths": [f"{_HOME}/Documents", f"{_HOME}/Downloads", f"{_HOME}/Desktop"],
        "storage_patterns": [
            {"purpose": "forecasting work", "path": "D:/Hydrology/Forecasts"},
            {"purpose": "gauge records", "path": "D:/Hydrology/Gauges"},
            {"purpose": "reports", "path": "D:/Hydrology/Reports"},
            {"purpose": "attachments", "path": "D:/Hydrology/Incoming"},
        ],
        "organization_style": "Project folders on D:, personal notes under Documents",
        "naming_style": {"description": "Topic_Year_vN", "examples": ["RunoffForecast_2025_v2.xlsx"]},
        "usage_patterns": "Daily, heavier before spring melt",
    }


_FILES = [
    ("D:/Hydrology/Gauges/GaugeNetwork_Stations_2023.xlsx", "2023-03-14 10:20", "authored", "Station list"),
    ("D:/Hydrology/Gauges/StreamflowRecord_2023.csv", "2023-12-29 16:05", "authored", "Daily flows 2023"),
    ("D:/Hydrology/Gauges/StreamflowRecord_2024.csv", "2024-12-30 15:40", "authored", "Daily flows 2024"),
    ("D:/Hydrology/Gauges/StreamflowRecord_2025.csv", "2025-11-28 09:10", "authored", "Daily flows 2025"),
    ("D:/Hydrology/Gauges/RatingCurves_2025.xlsx", "2025-06-03 13:30", "authored", "Stage-discharge fits"),
    ("D:/Hydrology/Forecasts/SnowSurvey_Summary_2025.pdf", "2025-03-10 11:00", "web_download", "Snow survey bulletin"),
    ("D:/Hydrology/Forecasts/RunoffForecast_2025_v1.xlsx", "2025-03-18 09:45", "authored", "First 2025 forecast"),
    ("D:/Hydrology/Forecasts/RunoffForecast_2025_v2.xlsx", "2025-04-02 14:15", "authored", "Revised 2025 forecast"),
    ("D:/Hydrology/Forecasts/RunoffForecast_Memo_2025.docx", "2025-04-04 17:20", "authored", "Forecast memo 2025"),
    ("D:/Hydrology/Forecasts/ModelCalibration_Notes.md", "2025-02-11 10:05", "authored", "Calibration notes"),
    ("D:/Hydrology/Reports/ReservoirOps_Briefing_2025.pptx", "2025-04-09 08:50", "authored", "Ops briefing deck"),
    ("D:/Hydrology/Reports/AnnualHydrology_Report_2024.docx", "2025-01-31 16:00", "authored", "Annual report"),
    ("D:/Hydrology/Reports/AnnualHydrology_Report_2024.pdf", "2025-02-03 09:00", "authored", "Annual report export"),
    ("D:/Hydrology/Incoming/Ops_Requests_2025.docx", "2025-09-15 11:30", "received", "Ops data requests"),
    (f"{_HOME}/Documents/Meetings/OpsMeeting_Notes_2025.docx", "2025-10-06 15:10", "authored", "Meeting notes"),
    (f"{_HOME}/Documents/Training/Python_Hydrology_Course.txt", "2024-05-21 19:40", "authored", "Course notes"),
    (f"{_HOME}/Documents/Admin/Timesheet_2025.xlsx", "2025-12-05 17:00", "authored", "Timesheet"),
    (f"{_HOME}/Downloads/ClimateOutlook_Winter_2025.pdf", "2025-11-20 08:30", "web_download", "Seasonal outlook"),
    (f"{_HOME}/Downloads/setup_notes.txt", "2023-03-02 09:00", "system", "Installer leftovers"),
    (f"{_HOME}/Desktop/todo.txt", "2025-12-08 08:05", "authored", "Desk to-do list"),
    ("D:/Hydrology/Forecasts/Archive/RunoffForecast_2024_final.xlsx", "2024-04-05 12:00", "authored", "2024 forecast"),
    ("D:/Hydrology/Gauges/QC/GaugeQC_Flags_2025.csv", "2025-12-01 14:45", "authored", "QC flags"),
]

_EDGES = [
    (0, 1, "references"), (1, 2, "later_version"), (2, 3, "later_version"), (4, 3, "derived_from"),
    (5, 6, "derived_from"), (6, 7, "later_version"), (7, 8, "derived_from"), (9, 6, "references"),
    (8, 10, "derived_from"), (11, 12, "extracted_from"), (20, 6, "references"), (3, 21, "derived_from"),
]


def plan_reply(request: GenerationRequest) -> dict:
    files = []
    for n, (path, ts, origin, desc) in enumerate(_FILES, start=1):
        files.append({"file_id": f"f{n:03d}", "logical_path": path, "timestamp": ts, "origin": origin,
                      "description": desc, "content_mode": "stub" if origin == "system" else "full"})
    return {
        "directories": ["D:/Hydrology/Forecasts/Archive", "D:/Hydrology/Gauges/QC", f"{_HOME}/Documents/Meetings",
                        f"{_HOME}/Documents/Training", f"{_HOME}/Documents/Admin", "D:/Hydrology/Archive/2023"],
        "files": files,
        "edges": [{"from": _FILES[a][0], "to": _FILES[b][0], "relation": r} for a, b, r in _EDGES],
    }


def artifact_reply(request: GenerationRequest) -> dict:
    ctx = _context(request)
    planned = ctx.get("file", {})
    desc = planned.get("description", "file")
    sources = [p["logical_path"].rsplit("/", 1)[-1] for p in ctx.get("predecessors", [])]
    basis = ", ".join(sources) or "field records"
    family = ctx.get("family", "sections")
    if family == "sheets":
        rows = [["station", "month", "flow_m3s"]]
        for k in range(6):
            rows.append([f"LK-{10 + k}", k + 1, round(12.5 + 3.25 * k + (_pick(desc, k) % 100) / 100, 2)])
        return {"sheets": [{"name": "Data", "rows": rows}, {"name": "Notes", "rows": [["basis", basis]]}]}
    if family == "slides":
        return {"slides": [{"title": desc, "bullets": [f"Built from {basis}", "Inflow outlook", "Risks"]},
                           {"title": "Next steps", "bullets": ["Confirm storage targets"]}]}
    return {"sections": [{"heading": desc, "body": f"{desc}. Sources: {basis}."},
                         {"heading": "Open points", "body": "Check gauge LK-12 against the rating curve."}]}


# ---------------------------------------------------------------------------
# setup
# ---------------------------------------------------------------------------


def objectives_reply(request: GenerationRequest) -> dict:
    period = _context(request).get("period", {})
    start, end = period.get("start"), period.get("end")
    return {"deliverables": [
        {"deliverable_id": "D1", "title": "2026 Spring Runoff Forecast",
         "description": "Update the runoff forecast with the 2025 record and the new rating curves.",
         "target_date": end, "milestones": [{"week": 1, "summary": "Forecast workbook and memo drafted"}],
         "expected_artifacts": ["D:/Hydrology/Forecasts/RunoffForecast_2026_v1.xlsx",
                                "D:/Hydrology/Forecasts/RunoffForecast_Memo_2026.docx"]},
        {"deliverable_id": "D2", "title": "Reservoir Operations Briefing",
         "description": "Brief the operations director on inflow scenarios.",
         "target_date": end, "milestones": [{"week": 1, "summary": "Deck reviewed by manager"}],
         "expected_artifacts": ["D:/Hydrology/Reports/ReservoirOps_Briefing_2026.pptx"],
         "depends_on": ["D1"]},
        {"deliverable_id": "D3", "title": "Gauge QC Cleanup",
         "description": f"Resolve open QC flags raised since {start}.",
         "target_date": end, "milestones": [],
         "expected_artifacts": ["D:/Hydrology/Gauges/QC/GaugeQC_Resolution_2026.md"]},
    ]}


def collaborators_reply(request: GenerationRequest) -> dict:
    return {"collaborators": [
        {"name": "Priya Raman", "relationship": "Operations Director (manager)",
         "background": "Runs reservoir operations; wants clear inflow ranges.",
         "communication_style": "Brief, asks for numbers first",
         "response_latency": {"min_hours": 18, "max_hours": 30},
         "private_files": [{"filename": "OpsPriorities_2026.docx",
                            "sections": [{"heading": "Priorities", "body": "Storage target 78% by 1 May."}]}]},
        {"name": "Jonas Feld", "relationship": "peer hydrologist",
         "background": "Maintains the gauge network and rating curves.",
         "communication_style": "Detailed, replies within hours",
         "response_latency": {"min_hours": 2, "max_hours": 6},
         "private_files": [{"filename": "GaugeCalibration_Log_2025.xlsx",
                            "sheets": [{"name": "Log", "rows": [["station", "offset_cm"], ["LK-12", 4.5],
                                                                ["LK-13", -1.0]]}],
                            "planted_discrepancy": "LK-12 offset is 4.5 cm here but 3.0 cm in the rating workbook"}]},
        {"name": "Lena Ortmann", "relationship": "external climate consultant",
         "background": "Provides seasonal climate outlooks.",
         "communication_style": "Formal",
         "response_latency": {"min_hours": 24, "max_hours": 48},
         "private_files": []},
    ]}


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def weekly_plan_reply(request: GenerationRequest) -> dict:
    ctx = _context(request)
    deliverables = [d["deliverable_id"] for d in ctx.get("objectives", {}).get("deliverables", [])]
    contacts = [c["id"] for c in ctx.get("collaborators", [])]
    activities = []
    for n, day in enumerate(ctx.get("dates", [])):
        did = deliverables[n % len(deliverables)] if deliverables else None
        activities.append({"date": day, "time": "09:30", "kind": "deep_work",
                           "description": f"Advance {did or 'open work'}", "deliverable_id": did})
        if contacts:
            activities.append({"date": day, "time": "14:00", "kind": "outreach", "description": "Check in",
                               "contacts": [contacts[n % len(contacts)]]})
    return {"focus": f"Week {ctx.get('week_index')}: forecast and briefing", "activities": activities}


def _system_json(system_context: str, label: str) -> Any:
    for block in system_context.split("\n\n"):
        if block.startswith(label + ": "):
            return json.loads(block[len(label) + 2:])
    return None


def _attachments_in(inbox: str) -> list[tuple[str, int]]:
    out = []
    for block in inbox.split("\n\n"):
        head = re.match(r"^(m\d+) from ", block)
        tail = re.search(r"attachments: (.+)$", block)
        if head and tail and tail.group(1) != "none":
            out += [(head.group(1), int(i)) for i in re.findall(r"\[(\d+)\]", tail.group(1))]
    return out


def _call(name: str, **arguments: Any) -> dict:
    return {"name": name, "arguments": arguments}


def work_day_actions(opening: dict, system_context: str) -> list[list[dict]]:
    """The whole day's tool calls, one inner list per turn, derived only from the day's context."""
    day = opening.get("date", "2026-01-05")
    ordinal = date.fromisoformat(day).toordinal()
    objectives = _system_json(system_context, "Objectives") or {"deliverables": []}
    collaborators = _system_json(system_context, "Collaborators") or []
    artifacts = [p for d in objectives["deliverables"] for p in d["expected_artifacts"]]
    turns: list[list[dict]] = [[_call("check_inbox"), _call("list_dir", path="D:/Hydrology")]]

    saves = [_call("save_attachment", message_id=mid, index=i, dest="D:/Hydrology/Incoming/")
             for mid, i in _attachments_in(opening.get("inbox", ""))]
    files = [line.split(" (", 1)[0] for line in opening.get("files", [])]
    turns.append(saves or [_call("read_file", path=files[ordinal % len(files)] if files else "D:/Hydrology")])
    if ordinal % 2:
        turns.append([_call("read_file", path="D:/Hydrology/Forecasts/missing_notes.txt")])
    if artifacts:
        target = artifacts[ordinal % len(artifacts)]
        body = f"{target.rsplit('/', 1)[-1]} working draft for {day}.\nInflow range 410-520 hm3; LK-12 offset under review.\n"
        turns.append([_call("write_file", path=target, content=body)])
    else:
        target = None
    if collaborators:
        who = collaborators[ordinal % len(collaborators)]
        if ordinal % 3 == 0:
            turns.append([_call("send_message", recipient=who["id"], subject="(draft)", body="  ")])
        attach = [target] if target and ordinal % 2 == 0 else []
        turns.append([_call("send_message", recipient=who["id"], subject=f"Update {day}",
                            body=f"Hi {who['name'].split()[0]}, sharing where the forecast stands on {day}. "
                                 "Could you send anything that affects the LK-12 numbers?",
                            attachments=attach)])
    turns.append([_call("log_activity", text=f"{day}: drafted {target or 'notes'} and sent an update"),
                  _call("finish_day")])
    return turns


def work_turn_reply(request: GenerationRequest) -> dict:
    opening = extract_context(request.messages[0][1]) or {}
    step = sum(1 for speaker, _ in request.messages if speaker == "assistant")
    actions = work_day_actions(opening, request.system_context)
    if step >= len(actions):
        return {"text": "Done for today."}
    return {"text": f"step {step}", "tool_calls": actions[step]}


def collaborator_reply(request: GenerationRequest) -> dict:
    ctx = _context(request)
    me = ctx.get("you", {})
    thread = ctx.get("thread", [])
    inbound = [m for m in thread if m.get("recipient") == me.get("id")]
    files = sorted(ctx.get("private_files", {}))
    attach = files[:1] if len(inbound) == 1 else []
    first = me.get("name", "Colleague").split()[0]
    return {"subject": f"Re: {thread[-1].get('subject', '') if thread else 'update'}",
            "body": f"Thanks for the update. {first} here: please double-check the LK-12 figures before "
                    f"the next draft.", "attach": attach}


# ---------------------------------------------------------------------------
# evaluation and experience
# ---------------------------------------------------------------------------

_SOURCES = ("spec", "interaction", "expertise", "reference", "quality")


def rubric_reply(request: GenerationRequest) -> dict:
    ctx = _context(request)
    items = []
    for d in ctx.get("objectives", {}).get("deliverables", []):
        did = d["deliverable_id"]
        for k, path in enumerate(d.get("expected_artifacts", [])):
            items.append({"item_id": f"{did}-a{k}", "text": f"{path.rsplit('/', 1)[-1]} exists and is complete",
                          "points": 3, "source": "spec", "deliverable_id": did})
        items.append({"item_id": f"{did}-q", "text": f"{d['title']} states figures consistently",
                      "points": 2, "source": "quality", "deliverable_id": did})
        items.append({"item_id": f"{did}-x", "text": f"{d['title']} reflects collaborator input",
                      "points": 4, "source": "interaction", "deliverable_id": did})
    items.append({"item_id": "g-exp", "text": "Uses rating-curve offsets correctly", "points": 3,
                  "source": "expertise"})
    return {"items": items}


def merge_reply(request: GenerationRequest) -> dict:
    ctx = _context(request)
    merged: dict[tuple, dict] = {}
    for group in ctx.get("groups", []):
        for item in group["items"]:
            key = (item["text"], item["source"], item.get("deliverable_id"))
            entry = merged.setdefault(key, {k: item[k] for k in ("item_id", "text", "points", "source",
                                                                  "deliverable_id")} | {"sources": []})
            entry["sources"].append(item["ref"])
            entry["points"] = max(entry["points"], item["points"])
    return {"items": list(merged.values())}


def scores_reply(request: GenerationRequest) -> dict:
    ctx = _context(request)
    present = {a["path"] for d in ctx.get("deliverables", []) for a in d["artifacts"] if a["present"]}
    awards = {}
    for item in ctx.get("rubric", []):
        if item["source"] == "spec":
            awards[item["item_id"]] = item["points"] if any(item["text"].startswith(p.rsplit("/", 1)[-1])
                                                            for p in present) else 0
        else:
            awards[item["item_id"]] = _pick(item["item_id"], item["text"]) % (item["points"] + 1)
    return {"awards": awards}


def retrospective_reply(request: GenerationRequest) -> dict:
    ctx = _context(request)
    message_ids = [m["id"] for m in ctx.get("messages", [])][:3]
    paths = [a["path"] for d in ctx.get("deliverables", []) for a in d["artifacts"] if a["present"]][:2]
    errors = [e["ref"] for e in ctx.get("error_turns", [])][:3]
    days = [d["date"] for d in ctx.get("days", [])]
    turns = errors or ([f"{days[0]}#0"] if days else [])
    agg = ctx.get("score", {}).get("aggregate", {})
    def section(text: str, points: list[str] = (), **evidence: list[str]) -> dict:
        return {"text": text, "points": list(points), "evidence": evidence}
    return {"sections": {
        "executive_summary": section(f"The run scored {agg.get('awarded')}/{agg.get('possible')}.",
                                     paths=paths),
        "per_deliverable_analysis": section("Each deliverable was drafted at least once.", paths=paths),
        "collaborator_communication_analysis": section("Messages went out daily; replies arrived late in the week.",
                                                       messages=message_ids),
        "workflow_efficiency": section(f"{len(errors)} error turns were recorded.", turns=turns),
        "domain_insights": section("The LK-12 offset conflict was never reconciled."),
        "recommendations": section("Act on the following.", [
            "Fix figures a reviewer flags on the day they are flagged",
            "Reconcile gauge offsets across workbooks before drafting memos",
            "Do not send a message until its body is written",
        ]),
        "score_summary": section("See the table below."),
    }}


def extract_reply(request: GenerationRequest) -> dict:
    ctx = _context(request)
    recs = next((s for s in ctx.get("sections", []) if s["key"] == "recommendations"), {"points": []})
    kinds = ("failure_mode", "lesson", "warning", "work_pattern")
    items = [{"kind": kinds[n % len(kinds)], "text": text} for n, text in enumerate(recs["points"])]
    return {"items": items}


def partition_reply(request: GenerationRequest) -> dict:
    ctx = _context(request)
    groups: dict[str, list[str]] = {}
    for item in ctx.get("items", []):
        groups.setdefault(item["text"].strip().lower(), []).append(item["id"])
    return {"groups": [{"canonical_text": text, "members": ids} for text, ids in groups.items()]}


def skill_reply(request: GenerationRequest) -> dict:
    ctx = _context(request)
    ranked = ctx.get("ranked_groups", [])
    top = [{"tag": f"rank-{g['rank']}", "text": g["text"]} for g in ranked[:3]]
    rest = [{"tag": f"rank-{g['rank']}", "text": g["text"]} for g in ranked[3:]]
    sections = [{"heading": "Most frequent lessons", "rules": top}]
    if rest:
        sections.append({"heading": "Further lessons", "rules": rest})
    return {"occupation": ctx.get("occupation", ""), "trigger_scope": "Forecast memos, gauge workbooks, briefings",
            "sections": sections}


def demo_rules() -> list[ScriptedRule]:
    return [
        ScriptedRule("persona-expander", "", profile_reply),
        ScriptedRule("fs-planner", "filesystem policy", policy_reply),
        ScriptedRule("fs-planner", "", plan_reply),
        ScriptedRule("artifact-writer", "", artifact_reply),
        ScriptedRule("setup-agent", "deliverable work packages", objectives_reply),
        ScriptedRule("setup-agent", "", collaborators_reply),
        ScriptedRule("work-agent", "Plan the coming work days", weekly_plan_reply),
        ScriptedRule("work-agent", "", work_turn_reply),
        ScriptedRule("collaborator", "", collaborator_reply),
        ScriptedRule("judge", "Draft a weighted rubric", rubric_reply),
        ScriptedRule("judge", "Merge these draft rubrics", merge_reply),
        ScriptedRule("judge", "Score the final deliverables", scores_reply),
        ScriptedRule("judge", "Write a retrospective", retrospective_reply),
        ScriptedRule("extractor", "Extract reusable experience", extract_reply),
        ScriptedRule("extractor", "Group items", partition_reply),
        ScriptedRule("skill-creator", "", skill_reply),
        ScriptedRule("echo", "", "$last_message"),
    ]
