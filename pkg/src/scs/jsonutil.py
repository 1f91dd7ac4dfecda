"""Small JSON helpers: stable dumps, fenced-block extraction, atomic writes."""

from __future__ import annotations

import json
import os
import re
import tempfile
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import SchemaViolation

_FENCE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)
CONTEXT_MARKER = "\n\nCONTEXT:\n"


def dumps(value: Any) -> str:
    return json.dumps(value, indent=2, ensure_ascii=False) + "\n"


def dumps_line(value: Any) -> str:
    return json.dumps(value, ensure_ascii=False, separators=(",", ":")) + "\n"


def parse_json_text(text: str) -> Any:
    """Parse a model reply that should be JSON, tolerating a fenced block."""
    candidate = text.strip()
    match = _FENCE.search(candidate)
    if match:
        candidate = match.group(1).strip()
    try:
        return json.loads(candidate)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"response is not valid JSON ({exc.msg} at {exc.pos})") from None


def build_prompt(instructions: str, context: Any) -> str:
    """Instructions followed by a machine-readable context block."""
    return instructions.rstrip() + CONTEXT_MARKER + json.dumps(context, ensure_ascii=False, sort_keys=True)


def extract_context(text: str) -> Any:
    _, sep, tail = text.partition(CONTEXT_MARKER)
    if not sep:
        return None
    return json.loads(tail)


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _durable() -> bool:
    # rename already rules out torn files; fsync adds power-loss safety at a large cost on slow disks
    return os.environ.get("SCS_FSYNC", "") not in ("", "0")


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
            if _durable():
                handle.flush()
                os.fsync(handle.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def write_json(path: Path, value: Any) -> None:
    atomic_write_text(path, dumps(value))


def read_json(path: Path) -> Any:
    with Path(path).open("r", encoding="utf-8") as handle:
        return json.load(handle)


def append_jsonl(path: Path, value: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as handle:
        handle.write(dumps_line(value))


def write_jsonl(path: Path, values: Iterable[Any]) -> None:
    atomic_write_text(path, "".join(dumps_line(v) for v in values))


def iter_jsonl(path: Path) -> Iterator[Any]:
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                yield json.loads(line)
