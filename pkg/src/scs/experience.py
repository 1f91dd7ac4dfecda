"""Experience items, occupation digests, skills, and paired sign-test comparison."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from pathlib import Path
from typing import Any, Iterable

from .errors import EmptySample, PartitionInvalid, SchemaViolation, ScoreOutOfRange
from .evaluate import SECTIONS, RetrospectiveReport
from .gateway import Backend, ask_json
from .jsonutil import atomic_write_text, iter_jsonl, read_json, write_json, write_jsonl
from .profile import occupation_key
from .setup import slugify

logger = logging.getLogger(__name__)

KINDS = ("lesson", "warning", "failure_mode", "work_pattern")
NO_SKILL_MATCH = "no-skill-match"


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperienceItem:
    item_id: str
    kind: str
    text: str
    occupation: str
    source_run: str

    def to_dict(self) -> dict:
        return {"item_id": self.item_id, "kind": self.kind, "text": self.text,
                "occupation": self.occupation, "source_run": self.source_run}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperienceItem":
        item = cls(str(data["item_id"]), _kind(data["kind"]), str(data["text"]),
                   str(data["occupation"]), str(data["source_run"]))
        if not item.text.strip():
            raise SchemaViolation(f"experience item {item.item_id} has no text", ["text"])
        return item


def _kind(value: Any) -> str:
    kind = str(value or "").strip().lower().replace("-", "_").replace(" ", "_")
    if kind.endswith("s") and kind[:-1] in KINDS:
        kind = kind[:-1]
    if kind not in KINDS:
        raise SchemaViolation(f"unknown experience kind {value!r}", ["kind"])
    return kind


def extract_items(report: RetrospectiveReport, occupation: str, backend: Backend) -> list[ExperienceItem]:
    """Turn one retrospective into tagged experience items for its run's occupation."""
    context = {
        "occupation": occupation,
        "kinds": list(KINDS),
        "sections": [{"key": key, "title": title, "text": report.sections[key].text,
                      "points": report.sections[key].points} for key, title in SECTIONS],
    }
    data = ask_json(backend, "extractor", "experience_items",
                    "Extract reusable experience items from this retrospective. Each item has a kind "
                    "(lesson, warning, failure_mode or work_pattern) and a self-contained text.",
                    context)
    rows = data["items"]
    if not rows:
        raise SchemaViolation("extraction must yield a minimum of 1 item", ["items"])
    items = []
    for n, raw in enumerate(rows, start=1):
        if not isinstance(raw, dict) or not str(raw.get("text", "")).strip():
            raise SchemaViolation(f"experience item {n} needs non-empty text", ["items"])
        items.append(ExperienceItem(f"{report.run_id}:e{n:03d}", _kind(raw.get("kind")), str(raw["text"]).strip(),
                                    occupation, report.run_id))
    return items


def save_items(items: list[ExperienceItem], path: Path) -> None:
    write_jsonl(path, [i.to_dict() for i in items])


def load_items(path: Path) -> list[ExperienceItem]:
    return [ExperienceItem.from_dict(row) for row in iter_jsonl(path)]


# ---------------------------------------------------------------------------
# grouping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DigestGroup:
    canonical_text: str
    members: tuple[str, ...]

    @property
    def count(self) -> int:
        return len(self.members)

    def to_dict(self) -> dict:
        return {"canonical_text": self.canonical_text, "members": list(self.members), "count": self.count}


@dataclass
class OccupationDigest:
    occupation: str
    groups: list[DigestGroup]

    @property
    def total(self) -> int:
        return sum(g.count for g in self.groups)

    def to_dict(self) -> dict:
        return {"occupation": self.occupation, "total": self.total, "groups": [g.to_dict() for g in self.groups]}

    @classmethod
    def from_dict(cls, data: dict) -> "OccupationDigest":
        return cls(data["occupation"], [DigestGroup(g["canonical_text"], tuple(g["members"])) for g in data["groups"]])


def rank_groups(groups: Iterable[DigestGroup]) -> list[DigestGroup]:
    return sorted(groups, key=lambda g: (-g.count, g.canonical_text, g.members))


def digest_from_partition(occupation: str, items: list[ExperienceItem], partition: Any) -> OccupationDigest:
    """Check that the proposed partition covers every item exactly once, then count and rank."""
    if not isinstance(partition, list) or not partition:
        raise PartitionInvalid(f"{occupation}: partition must be a non-empty list of groups")
    ids = {i.item_id for i in items}
    seen: dict[str, int] = {}
    groups = []
    for n, raw in enumerate(partition):
        if not isinstance(raw, dict) or not isinstance(raw.get("members"), list) or not raw["members"]:
            raise PartitionInvalid(f"{occupation}: group {n} has no members")
        text = str(raw.get("canonical_text") or raw.get("text") or "").strip()
        if not text:
            raise PartitionInvalid(f"{occupation}: group {n} has no canonical text")
        members = tuple(sorted(str(m) for m in raw["members"]))
        for m in members:
            if m not in ids:
                raise PartitionInvalid(f"{occupation}: group {n} names unknown item {m}")
            seen[m] = seen.get(m, 0) + 1
        groups.append(DigestGroup(text, members))
    doubled = sorted(m for m, c in seen.items() if c > 1)
    if doubled:
        raise PartitionInvalid(f"{occupation}: items in more than one group: {doubled[:5]}")
    missing = sorted(ids - set(seen))
    if missing:
        raise PartitionInvalid(f"{occupation}: items in no group: {missing[:5]}")
    return OccupationDigest(occupation, rank_groups(groups))


def group_by_occupation(items: list[ExperienceItem]) -> dict[str, list[ExperienceItem]]:
    out: dict[str, list[ExperienceItem]] = {}
    for item in items:
        out.setdefault(occupation_key(item.occupation), []).append(item)
    return {k: sorted(v, key=lambda i: i.item_id) for k, v in sorted(out.items())}


def group_merge_count(items: list[ExperienceItem], backend: Backend) -> dict[str, OccupationDigest]:
    if not items:
        raise EmptySample("no experience items to group")
    digests = {}
    for key, members in group_by_occupation(items).items():
        context = {"occupation": members[0].occupation,
                   "items": [{"id": i.item_id, "kind": i.kind, "text": i.text} for i in members]}
        data = ask_json(backend, "extractor", "experience_partition",
                        "Group items that express the same lesson. Every item id must appear in exactly one "
                        "group. Give each group a canonical_text and its members.",
                        context)
        digests[key] = digest_from_partition(members[0].occupation, members, data["groups"])
    return digests


def save_digest(digest: OccupationDigest, out_dir: Path) -> Path:
    path = Path(out_dir) / f"digest_{slugify(digest.occupation)}.json"
    write_json(path, digest.to_dict())
    return path


# ---------------------------------------------------------------------------
# skills
# ---------------------------------------------------------------------------


@dataclass
class Skill:
    occupation: str
    trigger_scope: str
    sections: list[tuple[str, list[tuple[str, str]]]]

    @property
    def slug(self) -> str:
        return slugify(self.occupation)

    def validate(self) -> None:
        if not self.occupation.strip():
            raise SchemaViolation("skill has no occupation", ["occupation"])
        if not self.sections or not any(rules for _, rules in self.sections):
            raise SchemaViolation("skill needs at least one section with a rule", ["sections"])

    def to_dict(self) -> dict:
        return {
            "occupation": self.occupation,
            "trigger_scope": self.trigger_scope,
            "sections": [{"heading": h, "rules": [{"tag": t, "text": x} for t, x in rules]} for h, rules in self.sections],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Skill":
        skill = skill_from_record(data, data.get("occupation", ""))
        return skill

    def to_markdown(self) -> str:
        lines = ["---", f"name: {self.slug}", f"description: Working rules for {self.occupation}.", "---", "",
                 f"# {self.occupation}", "", f"**Trigger scope:** {self.trigger_scope}", ""]
        for n, (heading, rules) in enumerate(self.sections, start=1):
            lines += [f"## {n}. {heading}", ""]
            lines += [f"- **[{tag}]** {text}" for tag, text in rules]
            lines.append("")
        return "\n".join(lines).rstrip() + "\n"


def skill_from_record(data: Any, occupation: str) -> Skill:
    if not isinstance(data, dict) or not isinstance(data.get("sections"), list):
        raise SchemaViolation("skill record needs a sections list", ["sections"])
    sections = []
    for raw in data["sections"]:
        if not isinstance(raw, dict) or not str(raw.get("heading", "")).strip():
            raise SchemaViolation("skill section needs a heading", ["sections"])
        rules = []
        for rule in raw.get("rules") or []:
            if isinstance(rule, str):
                rule = {"tag": "", "text": rule}
            if not isinstance(rule, dict) or not str(rule.get("text", "")).strip():
                raise SchemaViolation(f"rule under {raw['heading']!r} needs text", ["rules"])
            rules.append((str(rule.get("tag", "")).strip(), str(rule["text"]).strip()))
        sections.append((str(raw["heading"]).strip(), rules))
    skill = Skill(str(data.get("occupation") or occupation), str(data.get("trigger_scope", "")).strip(), sections)
    skill.validate()
    return skill


def build_skill(digest: OccupationDigest, backend: Backend) -> Skill:
    if not digest.groups:
        raise EmptySample(f"digest for {digest.occupation!r} is empty")
    context = {
        "occupation": digest.occupation,
        "ranked_groups": [{"rank": n, "count": g.count, "text": g.canonical_text}
                          for n, g in enumerate(digest.groups, start=1)],
    }
    data = ask_json(backend, "skill-creator", "skill",
                    "Write an occupation skill from these ranked lessons. Higher counts matter more. Return "
                    "trigger_scope and sections, each with a heading and tagged rules.",
                    context)
    return skill_from_record(data, digest.occupation)


def save_skill(skill: Skill, out_dir: Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    md = out_dir / f"{skill.slug}.md"
    atomic_write_text(md, skill.to_markdown())
    js = out_dir / f"{skill.slug}.json"
    write_json(js, skill.to_dict())
    return md, js


def load_skills(skill_dir: Path) -> dict[str, Skill]:
    out = {}
    for path in sorted(Path(skill_dir).glob("*.json")):
        skill = Skill.from_dict(read_json(path))
        out[occupation_key(skill.occupation)] = skill
    return out


def match_skill(skills: dict[str, Skill], occupation: str) -> tuple[Skill | None, str | None]:
    """Exact occupation-key match; a miss is flagged and the run proceeds without a skill."""
    skill = skills.get(occupation_key(occupation))
    return (skill, None) if skill else (None, NO_SKILL_MATCH)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def sign_test_exact(wins: int, losses: int) -> tuple[Fraction, Fraction]:
    if wins < 0 or losses < 0:
        raise ScoreOutOfRange(f"counts must be non-negative, got ({wins}, {losses})")
    n = wins + losses
    if n < 1:
        raise EmptySample("sign test needs at least one non-tied pair")
    tail = sum(comb(n, k) for k in range(max(wins, losses), n + 1))
    one = Fraction(tail, 2 ** n)
    return one, min(Fraction(1), 2 * one)


def sign_test(wins: int, losses: int) -> tuple[float, float]:
    """Exact binomial sign test; two-sided is the doubled tail capped at 1."""
    one, two = sign_test_exact(wins, losses)
    return float(one), float(two)


@dataclass
class PairedComparison:
    pairs: int
    wins: int
    losses: int
    ties: int
    mean_baseline: float
    mean_treatment: float
    mean_delta: float
    p_one_sided: float
    p_two_sided: float
    degenerate: bool = False
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "pairs": self.pairs, "wins": self.wins, "losses": self.losses, "ties": self.ties,
            "mean_baseline": self.mean_baseline, "mean_treatment": self.mean_treatment,
            "mean_delta": self.mean_delta, "p_one_sided": self.p_one_sided, "p_two_sided": self.p_two_sided,
            "degenerate": self.degenerate, "flags": list(self.flags),
        }


def paired_compare(pairs: list[tuple[float, float]]) -> PairedComparison:
    if not pairs:
        raise EmptySample("no pairs to compare")
    for b, t in pairs:
        for v in (b, t):
            if not 0.0 <= v <= 100.0:
                raise ScoreOutOfRange(f"score {v} outside [0, 100]")
    wins = sum(1 for b, t in pairs if t > b)
    losses = sum(1 for b, t in pairs if t < b)
    n = len(pairs)
    mean_b = sum(b for b, _ in pairs) / n
    mean_t = sum(t for _, t in pairs) / n
    degenerate = wins + losses == 0
    p_one, p_two = (1.0, 1.0) if degenerate else sign_test(wins, losses)
    return PairedComparison(n, wins, losses, n - wins - losses, mean_b, mean_t, mean_t - mean_b,
                            p_one, p_two, degenerate)
