"""Batch statistics over many run stores, recomputed from what is on disk."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .engine.telemetry import RunTelemetry, compute_telemetry
from .errors import StageMissing
from .jsonutil import atomic_write_text, iter_jsonl, read_json, write_json
from .materialize import ComputerStats, lower_median

# (key, label) in output order; "pre"/"post" are relative to the simulation.
COMPUTER_METRICS = (
    ("files_pre", "Files per computer (pre)"),
    ("files_post", "Files per computer (post)"),
    ("directories_pre", "Directories (pre)"),
    ("directories_post", "Directories (post)"),
    ("avg_depth_pre", "Avg directory depth (pre)"),
    ("avg_depth_post", "Avg directory depth (post)"),
    ("max_depth_pre", "Max directory depth (pre)"),
    ("max_depth_post", "Max directory depth (post)"),
)
SIMULATION_METRICS = (
    ("turns_planning", "# Turns (weekly planning)"),
    ("turns_execution", "# Turns (daily execution)"),
    ("turns_total", "# Turns (total)"),
    ("wall_clock_hours", "Wall-clock time (hours)"),
    ("collaborators", "# Collaborators"),
    ("communications", "# Communications"),
)


@dataclass(frozen=True)
class MetricStats:
    mean: float
    median: float
    min: float
    max: float

    @classmethod
    def of(cls, values: list[float]) -> "MetricStats":
        return cls(sum(values) / len(values), lower_median(values), min(values), max(values))

    def to_dict(self) -> dict:
        return {"mean": self.mean, "median": self.median, "min": self.min, "max": self.max}


@dataclass
class BatchSummary:
    runs: list[str]
    metrics: dict[str, MetricStats]
    per_run: dict[str, dict[str, float]]
    type_distribution: dict[str, tuple[int, float]]

    def to_dict(self) -> dict:
        return {
            "runs": list(self.runs),
            "metrics": {k: self.metrics[k].to_dict() for k, _ in COMPUTER_METRICS + SIMULATION_METRICS},
            "per_run": self.per_run,
            "type_distribution": {k: {"count": c, "percentage": p}
                                  for k, (c, p) in sorted(self.type_distribution.items(), key=lambda kv: (-kv[1][0], kv[0]))},
        }

    def to_markdown(self) -> str:
        lines = [f"# Batch summary ({len(self.runs)} runs)", ""]
        for title, group in (("Synthetic computers", COMPUTER_METRICS), ("Simulations", SIMULATION_METRICS)):
            lines += [f"## {title}", "", "| Metric | Mean | Median | Min | Max |", "|---|---:|---:|---:|---:|"]
            for key, label in group:
                m = self.metrics[key]
                lines.append(f"| {label} | {_fmt(m.mean)} | {_fmt(m.median)} | {_fmt(m.min)} | {_fmt(m.max)} |")
            lines.append("")
        lines += ["## Artifact types", "", "| Type | Count | Share |", "|---|---:|---:|"]
        for key, (count, pct) in sorted(self.type_distribution.items(), key=lambda kv: (-kv[1][0], kv[0])):
            lines.append(f"| {key} | {count} | {pct:.1f}% |")
        return "\n".join(lines) + "\n"


def _fmt(value: float) -> str:
    return f"{value:.0f}" if float(value).is_integer() else f"{value:.2f}"


def _stats(run_dir: Path, name: str) -> ComputerStats:
    path = run_dir / name
    if not path.exists():
        raise StageMissing(f"{run_dir} lacks {name}")
    return ComputerStats.from_dict(read_json(path))


def _telemetry(run_dir: Path) -> RunTelemetry:
    if (run_dir / "days").is_dir() or (run_dir / "weeks").is_dir():
        return compute_telemetry(run_dir)
    if (run_dir / "telemetry.json").exists():
        return RunTelemetry.from_dict(read_json(run_dir / "telemetry.json"))
    raise StageMissing(f"{run_dir} has no turn logs or telemetry.json")


def run_metrics(run_dir: Path) -> tuple[dict[str, float], ComputerStats]:
    run_dir = Path(run_dir)
    pre = _stats(run_dir, "stats_pre.json")
    post = _stats(run_dir, "stats_post.json")
    tel = _telemetry(run_dir)
    collab_path = run_dir / "collaborators.json"
    if not collab_path.exists():
        raise StageMissing(f"{run_dir} lacks collaborators.json")
    timing = run_dir / "timing.json"
    seconds = float(read_json(timing)["wall_clock_seconds"]) if timing.exists() else tel.wall_clock_seconds
    values = {
        "files_pre": pre.file_count,
        "files_post": post.file_count,
        "directories_pre": pre.directory_count,
        "directories_post": post.directory_count,
        "avg_depth_pre": pre.avg_directory_depth,
        "avg_depth_post": post.avg_directory_depth,
        "max_depth_pre": pre.max_directory_depth,
        "max_depth_post": post.max_directory_depth,
        "turns_planning": tel.turns_weekly_planning,
        "turns_execution": tel.turns_daily_execution,
        "turns_total": tel.turns_weekly_planning + tel.turns_daily_execution,
        "wall_clock_hours": seconds / 3600.0,
        "collaborators": len(read_json(collab_path)["collaborators"]),
        "communications": tel.communications_total,
    }
    return values, pre


def pooled_distribution(stats: list[ComputerStats]) -> dict[str, tuple[int, float]]:
    counts: dict[str, int] = {}
    for s in stats:
        for ext, (count, _) in s.type_distribution.items():
            counts[ext] = counts.get(ext, 0) + count
    total = sum(counts.values())
    return {k: (c, 100.0 * c / total if total else 0.0) for k, c in counts.items()}


def summarize_batch(run_dirs: list[Path]) -> BatchSummary:
    if not run_dirs:
        raise StageMissing("no run stores to summarize")
    per_run: dict[str, dict[str, float]] = {}
    pre_stats = []
    for run_dir in run_dirs:
        values, pre = run_metrics(Path(run_dir))
        per_run[str(run_dir)] = values
        pre_stats.append(pre)
    metrics = {key: MetricStats.of([v[key] for v in per_run.values()])
               for key, _ in COMPUTER_METRICS + SIMULATION_METRICS}
    return BatchSummary([str(r) for r in run_dirs], metrics, per_run, pooled_distribution(pre_stats))


def write_summary(summary: BatchSummary, out: Path) -> tuple[Path, Path]:
    """Write both summary.json and summary.md next to ``out`` (suffix decides nothing)."""
    out = Path(out)
    base = out.with_suffix("") if out.suffix in (".json", ".md") else out / "summary"
    js, md = base.with_suffix(".json"), base.with_suffix(".md")
    write_json(js, summary.to_dict())
    atomic_write_text(md, summary.to_markdown())
    return js, md


def added_files(run_dir: Path) -> int:
    """Files added across all day diffs, for the pre/post consistency check."""
    total = 0
    days = Path(run_dir) / "days"
    for day in sorted(days.glob("*/day.json")) if days.is_dir() else []:
        total += len(read_json(day)["file_diff"]["added"])
    return total


def shares_count(run_dir: Path) -> int:
    path = Path(run_dir) / "shares.jsonl"
    return sum(1 for _ in iter_jsonl(path)) if path.exists() else 0
