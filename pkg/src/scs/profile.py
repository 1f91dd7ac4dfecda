"""Persona to user-profile expansion."""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field
from typing import Any

from .errors import EmptyPersona, SchemaViolation
from .gateway import Backend, ask_json

TECHNICAL_LEVELS = ("low", "intermediate", "high")
USAGE_LEVELS = ("low", "medium", "high")

REQUIRED_FIELDS = (
    "identity.full_name",
    "occupation",
    "organization",
    "current_projects",
    "technical_level",
    "computer_usage_level",
    "naming_preferences",
    "organization_style",
)

_LEVEL_WORDS = {
    "low": ("low", "basic", "novice", "beginner", "minimal", "limited"),
    "mid": ("intermediate", "moderate", "medium", "average", "mid"),
    "high": ("high", "advanced", "expert", "heavy", "power", "very"),
}

PROFILE_INSTRUCTIONS = (
    "Expand the persona below into a detailed user profile. Return a JSON object with keys "
    "identity {full_name, username, location}, occupation, organization, career_stage, "
    "responsibilities[], recent_work_history[{period, summary}], current_projects[], "
    "collaborators[{name, relationship}], common_work_products[], technical_level "
    "(low|intermediate|high), computer_usage_level (low|medium|high), preferred_tools[], "
    "document_habits, spreadsheet_usage, attachment_saving, naming_preferences, organization_style."
)


@dataclass(frozen=True)
class Persona:
    id: str
    text: str

    def validate(self) -> None:
        stripped = self.text.strip()
        if not stripped:
            raise EmptyPersona(f"persona {self.id!r} has no text")
        if len(stripped) < 20:
            raise EmptyPersona(f"persona {self.id!r} is shorter than 20 characters")


@dataclass
class Identity:
    full_name: str
    username: str
    location: str = ""


@dataclass
class UserProfile:
    identity: Identity
    occupation: str
    organization: str
    current_projects: list[str]
    technical_level: str
    computer_usage_level: str
    naming_preferences: str
    organization_style: str
    career_stage: str = ""
    responsibilities: list[str] = field(default_factory=list)
    recent_work_history: list[tuple[str, str]] = field(default_factory=list)
    collaborators: list[tuple[str, str]] = field(default_factory=list)
    common_work_products: list[str] = field(default_factory=list)
    preferred_tools: list[str] = field(default_factory=list)
    document_habits: str = ""
    spreadsheet_usage: str = ""
    attachment_saving: str = ""
    persona_id: str = ""

    def validate(self) -> None:
        empty = []
        if not self.identity.username.strip():
            empty.append("identity.username")
        if not self.occupation.strip():
            empty.append("occupation")
        if not self.organization_style.strip():
            empty.append("organization_style")
        if not self.current_projects:
            empty.append("current_projects")
        if empty:
            raise SchemaViolation("profile fields must be non-empty", empty)
        if self.technical_level not in TECHNICAL_LEVELS:
            raise SchemaViolation("bad technical level", ["technical_level"])
        if self.computer_usage_level not in USAGE_LEVELS:
            raise SchemaViolation("bad computer usage level", ["computer_usage_level"])

    def to_dict(self) -> dict:
        data = asdict(self)
        data["recent_work_history"] = [{"period": p, "summary": s} for p, s in self.recent_work_history]
        data["collaborators"] = [{"name": n, "relationship": r} for n, r in self.collaborators]
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "UserProfile":
        profile = _build(data, strict=True)
        profile.persona_id = str(data.get("persona_id", ""))
        return profile

    @property
    def occupation_key(self) -> str:
        return occupation_key(self.occupation)


def occupation_key(occupation: str) -> str:
    return " ".join(occupation.split()).casefold()


def normalize_occupation(text: str) -> str:
    """Trim and title-case word by word, leaving acronyms such as CFA alone."""
    words = []
    for word in text.split():
        if len(word) > 1 and word.isupper():
            words.append(word)
        else:
            words.append(word[:1].upper() + word[1:].lower())
    return " ".join(words).rstrip(".")


def _map_level(value: Any, target: tuple[str, ...], field_name: str) -> str:
    text = str(value or "").strip().lower()
    if text in target:
        return text
    tokens = re.findall(r"[a-z]+", text)
    for bucket, words in (("low", _LEVEL_WORDS["low"]), ("high", _LEVEL_WORDS["high"]), ("mid", _LEVEL_WORDS["mid"])):
        if any(t in words for t in tokens):
            if bucket == "mid":
                return target[1]
            return bucket
    raise SchemaViolation(f"cannot map {value!r} to one of {list(target)}", [field_name])


def derive_username(full_name: str) -> str:
    parts = re.findall(r"[A-Za-z]+", full_name)
    if not parts:
        return ""
    if len(parts) == 1:
        return parts[0].lower()
    return (parts[0][0] + parts[-1]).lower()


def _text(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, list):
        return "; ".join(str(v) for v in value)
    return str(value).strip()


def _str_list(value: Any) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [value.strip()] if value.strip() else []
    return [str(v).strip() for v in value if str(v).strip()]


def _pairs(value: Any, first: str, second: str) -> list[tuple[str, str]]:
    out = []
    for entry in value or []:
        if isinstance(entry, dict):
            out.append((_text(entry.get(first)), _text(entry.get(second))))
        elif isinstance(entry, (list, tuple)) and len(entry) == 2:
            out.append((_text(entry[0]), _text(entry[1])))
        else:
            out.append((_text(entry), ""))
    return out


def _missing(data: dict) -> list[str]:
    missing = []
    identity = data.get("identity")
    for name in REQUIRED_FIELDS:
        if name == "identity.full_name":
            if not isinstance(identity, dict) or not _text(identity.get("full_name")):
                missing.append(name)
        elif name not in data or data[name] in (None, "", []):
            missing.append(name)
    return missing


def _build(data: dict, strict: bool = False) -> UserProfile:
    if not isinstance(data, dict):
        raise SchemaViolation("profile must be a JSON object")
    missing = _missing(data)
    if missing:
        raise SchemaViolation("profile is missing required fields", missing)
    ident = data["identity"]
    full_name = _text(ident.get("full_name"))
    username = _text(ident.get("username")) or derive_username(full_name)
    occupation = _text(data["occupation"]) if strict else normalize_occupation(_text(data["occupation"]))
    profile = UserProfile(
        identity=Identity(full_name, username, _text(ident.get("location"))),
        occupation=occupation,
        organization=_text(data["organization"]),
        current_projects=_str_list(data["current_projects"]),
        technical_level=_map_level(data["technical_level"], TECHNICAL_LEVELS, "technical_level"),
        computer_usage_level=_map_level(data["computer_usage_level"], USAGE_LEVELS, "computer_usage_level"),
        naming_preferences=_text(data["naming_preferences"]),
        organization_style=_text(data["organization_style"]),
        career_stage=_text(data.get("career_stage")),
        responsibilities=_str_list(data.get("responsibilities")),
        recent_work_history=_pairs(data.get("recent_work_history"), "period", "summary"),
        collaborators=_pairs(data.get("collaborators"), "name", "relationship"),
        common_work_products=_str_list(data.get("common_work_products")),
        preferred_tools=_str_list(data.get("preferred_tools")),
        document_habits=_text(data.get("document_habits")),
        spreadsheet_usage=_text(data.get("spreadsheet_usage")),
        attachment_saving=_text(data.get("attachment_saving")),
    )
    profile.validate()
    return profile


def profile_from_record(data: dict, persona_id: str = "") -> UserProfile:
    """Turn a raw generated record into a validated profile."""
    profile = _build(data)
    profile.persona_id = persona_id
    return profile


def expand_persona(persona: Persona, backend: Backend) -> UserProfile:
    persona.validate()
    record = ask_json(
        backend,
        "persona-expander",
        "user_profile",
        PROFILE_INSTRUCTIONS,
        {"persona_id": persona.id, "persona": persona.text.strip()},
    )
    return profile_from_record(record, persona.id)
