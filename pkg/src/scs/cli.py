"""Command-line driver that sequences the pipeline over run stores.

Exit codes: 0 success, 2 validation failure, 3 backend failure, 4 budget
exhaustion, 1 anything else the package raises.
"""

from __future__ import annotations

import argparse
import glob
import logging
import shutil
import sys
from datetime import date
from pathlib import Path
from typing import Any

from .engine import SimulationConfig, run_simulation
from .errors import BudgetExhausted, SCSError, StageMissing, ValidationError
from .evaluate import (Rubric, ScoreReport, draft_rubric, load_retrospective, merge_rubrics, save_draft, score_run,
                       write_retrospective)
from .experience import (build_skill, extract_items, group_merge_count, load_items, load_skills, match_skill,
                         paired_compare, save_digest, save_items, save_skill)
from .fsplan import generate_policy, plan_filesystem
from .gateway import Backend, make_backend
from .jsonutil import append_jsonl, iter_jsonl, read_json, write_json
from .materialize import HttpFetcher, MirrorFetcher, NullFetcher, SyntheticComputer, computer_stats, materialize_computer
from .profile import Persona, UserProfile, expand_persona
from .runstore import RunStore, new_run_id
from .setup import CollaboratorSet, ObjectiveSet, create_collaborators, create_objectives
from .stats_report import summarize_batch, write_summary

logger = logging.getLogger("scs")

COMMAND_LOG = "commands.jsonl"
RUN_REF = "@run/"


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _backend(args: argparse.Namespace, run_dir: Path | None) -> Backend:
    transcript = Path(args.transcript) if args.transcript else None
    if transcript is None and run_dir is not None and args.backend != "replay":
        transcript = run_dir / "transcript.jsonl"
    script = Path(args.script) if args.script else None
    record = Path(args.record) if getattr(args, "record", None) else None
    return make_backend(args.backend, transcript_path=transcript, script=script, record_path=record)


def _expand(patterns: list[str]) -> list[Path]:
    out: list[Path] = []
    for pattern in patterns:
        matches = sorted(glob.glob(pattern))
        out += [Path(m) for m in (matches or [pattern])]
    return out


def _log_command(run_dir: Path, name: str, params: dict) -> None:
    """Remember a per-run command so ``scs replay`` can re-issue it elsewhere."""
    append_jsonl(run_dir / COMMAND_LOG, {"command": name, "params": params})


def _rel(path: Path | str | None, run_dir: Path) -> str | None:
    if path is None:
        return None
    path = Path(path).resolve()
    try:
        return RUN_REF + path.relative_to(run_dir.resolve()).as_posix()
    except ValueError:
        return str(path)


def _abs(value: str | None, run_dir: Path) -> Path | None:
    if value is None:
        return None
    return run_dir / value[len(RUN_REF):] if value.startswith(RUN_REF) else Path(value)


def _fetcher(params: dict) -> Any:
    if params.get("mirror"):
        return MirrorFetcher(Path(params["mirror"]))
    if params.get("url_map"):
        return HttpFetcher(read_json(Path(params["url_map"])))
    return NullFetcher()


def _load_world(store: RunStore) -> tuple[UserProfile, SyntheticComputer]:
    profile = UserProfile.from_dict(store.load("profile"))
    store.load("computer")
    return profile, SyntheticComputer.load(store.root / "computer")


# ---------------------------------------------------------------------------
# stage implementations (shared by the CLI and by replay)
# ---------------------------------------------------------------------------


def do_create_computer(run_dir: Path, params: dict, backend: Backend, force: bool) -> None:
    store = RunStore(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_json(run_dir / "run.json", {"run_id": params["run_id"]})
    persona = Persona("persona", params["persona_text"])
    persona.validate()
    store.save("persona", persona.text, force)
    profile = expand_persona(persona, backend)
    store.save("profile", profile, force)
    policy = generate_policy(profile, backend, os_style=params.get("os_style", "windows"))
    store.save("policy", policy, force)
    plan = plan_filesystem(profile, policy, backend)
    store.save("plan", plan, force)
    store.check_ready("computer", force)
    for sub in ("computer", "private"):
        if force and (run_dir / sub).exists():
            shutil.rmtree(run_dir / sub)
    materialize_computer(plan, run_dir / "computer", _fetcher(params), backend, private_store=run_dir / "private")
    store.mark("computer", force)
    store.save("stats_pre", computer_stats(run_dir / "computer"), force)


def do_setup(run_dir: Path, params: dict, backend: Backend, force: bool) -> None:
    store = RunStore(run_dir)
    profile, computer = _load_world(store)
    start = date.fromisoformat(params["period_start"]) if params.get("period_start") else None
    objectives = create_objectives(profile, computer, backend, period_start=start,
                                   working_day_count=int(params.get("days", 20)))
    store.save("objectives", objectives, force)
    store.check_ready("collaborators", force)
    collaborators = create_collaborators(profile, objectives, backend, computer)
    store.save("collaborators", collaborators, force)


def do_simulate(run_dir: Path, params: dict, backend: Backend, force: bool) -> int:
    store = RunStore(run_dir)
    store.check_ready("simulation", force)
    profile, computer = _load_world(store)
    objectives = ObjectiveSet.from_dict(store.load("objectives"), computer.os_style)
    collaborators = CollaboratorSet.load(store.load("collaborators"), computer.private_store)
    skills, flag = [], None
    if params.get("skills"):
        skill, flag = match_skill(load_skills(_abs(params["skills"], run_dir)), profile.occupation)
        if skill is not None:
            skills = [skill.to_markdown()]
    run_id = read_json(run_dir / "run.json")["run_id"] if (run_dir / "run.json").exists() else run_dir.name
    config = SimulationConfig(working_days=params.get("days"), seed=int(params.get("seed", 0)), skills=skills,
                              skill_flag=flag, run_id=run_id,
                              per_day_turn_budget=int(params.get("per_day_turn_budget", 400)),
                              global_turn_budget=int(params.get("global_turn_budget", 5000)))
    code = 0
    try:
        run_simulation(computer, objectives, collaborators, config, backend, profile, run_dir)
    except BudgetExhausted:
        code = 4
    store.mark("simulation", force)
    store.mark("telemetry", force)
    store.save("stats_post", computer_stats(run_dir / "computer"), force)
    return code


def do_make_rubric(run_dirs: list[Path], out: Path, drafts_per_run: int, backend: Backend) -> Rubric:
    drafts = []
    k = 0
    for run_dir in run_dirs:
        for _ in range(drafts_per_run):
            k += 1
            draft = draft_rubric(run_dir, backend, draft_index=k)
            save_draft(draft, out.parent, k)
            drafts.append(draft)
    rubric = merge_rubrics(drafts, backend)
    write_json(out, rubric.to_dict())
    for run_dir in {r.resolve() for r in run_dirs}:
        store = RunStore(run_dir)
        # a shared rubric written elsewhere is not this run's stage output
        if store.path("rubric").resolve() == out.resolve():
            store.mark("rubric", force=True)
    return rubric


def do_evaluate(run_dir: Path, params: dict, backend: Backend, force: bool) -> ScoreReport:
    store = RunStore(run_dir)
    store.check_ready("score", force)
    rubric = Rubric.from_dict(read_json(_abs(params["rubric"], run_dir)))
    report = score_run(rubric, run_dir, backend)
    store.mark("score", force)
    return report


def do_retrospect(run_dir: Path, params: dict, backend: Backend, force: bool) -> None:
    store = RunStore(run_dir)
    store.check_ready("retrospective", force)
    write_retrospective(run_dir, ScoreReport.from_dict(store.load("score")), backend)
    store.mark("retrospective", force)


def do_extract_skills(run_dirs: list[Path], out: Path, backend: Backend, force: bool) -> list[Path]:
    items = []
    for run_dir in run_dirs:
        store = RunStore(run_dir)
        if store.is_complete("experience") and not force:
            items += load_items(store.path("experience"))
            continue
        store.check_ready("experience", force)
        profile = UserProfile.from_dict(store.load("profile"))
        found = extract_items(load_retrospective(run_dir), profile.occupation, backend)
        save_items(found, store.path("experience"))
        store.mark("experience", force)
        items += found
    written = []
    for digest in group_merge_count(items, backend).values():
        save_digest(digest, out)
        written += list(save_skill(build_skill(digest, backend), out))
    return written


def replay_run(source: Path, target: Path, backend: Backend) -> None:
    """Re-issue every logged command of ``source`` against ``target``."""
    log = source / COMMAND_LOG
    if not log.exists():
        raise StageMissing(f"{source} has no {COMMAND_LOG} to replay")
    if target.exists() and any(target.iterdir()):
        raise ValidationError(f"replay target {target} is not empty")
    target.mkdir(parents=True, exist_ok=True)
    for row in iter_jsonl(log):
        name, params = row["command"], row["params"]
        _log_command(target, name, params)
        if name == "create-computer":
            do_create_computer(target, params, backend, False)
        elif name == "setup":
            do_setup(target, params, backend, False)
        elif name == "simulate":
            do_simulate(target, params, backend, False)
        elif name == "make-rubric":
            do_make_rubric([target] * params["run_count"], _abs(params["out"], target), params["drafts"], backend)
        elif name == "evaluate":
            do_evaluate(target, params, backend, False)
        elif name == "retrospect":
            do_retrospect(target, params, backend, False)
        elif name == "extract-skills":
            do_extract_skills([target], _abs(params["out"], target), backend, False)
        else:
            raise ValidationError(f"cannot replay command {name!r}")


# ---------------------------------------------------------------------------
# argparse commands
# ---------------------------------------------------------------------------


def cmd_create_computer(args: argparse.Namespace) -> int:
    run_dir = Path(args.run) if args.run else Path(args.runs_root) / new_run_id()
    params = {"run_id": args.run_id or run_dir.name, "persona_text": Path(args.persona).read_text(encoding="utf-8"),
              "os_style": args.os, "mirror": args.mirror, "url_map": args.url_map}
    run_dir.mkdir(parents=True, exist_ok=True)
    backend = _backend(args, run_dir)
    do_create_computer(run_dir, params, backend, args.force)
    _log_command(run_dir, "create-computer", params)
    print(run_dir)
    return 0


def cmd_setup(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    params = {"days": args.days, "period_start": args.period_start}
    do_setup(run_dir, params, _backend(args, run_dir), args.force)
    _log_command(run_dir, "setup", params)
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    params = {"days": args.days, "seed": args.seed, "skills": _rel(args.skills, run_dir),
              "per_day_turn_budget": args.per_day_turn_budget, "global_turn_budget": args.global_turn_budget}
    code = do_simulate(run_dir, params, _backend(args, run_dir), args.force)
    _log_command(run_dir, "simulate", params)
    tel = read_json(run_dir / "telemetry.json")
    print(f"turns {tel['turns_total']} (errors {tel['error_turns']}), messages {tel['communications_total']}")
    return code


def cmd_make_rubric(args: argparse.Namespace) -> int:
    runs = _expand(args.runs)
    if not runs:
        raise StageMissing("no runs given")
    out = Path(args.out) if args.out else runs[0] / "eval" / "rubric.json"
    backend = _backend(args, runs[0])
    rubric = do_make_rubric(runs, out, args.drafts, backend)
    if len({r.resolve() for r in runs}) == 1:
        _log_command(runs[0], "make-rubric", {"run_count": len(runs), "drafts": args.drafts, "out": _rel(out, runs[0])})
    print(f"{len(rubric.items)} items, {rubric.total_points} points -> {out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    params = {"rubric": _rel(args.rubric or run_dir / "eval" / "rubric.json", run_dir)}
    report = do_evaluate(run_dir, params, _backend(args, run_dir), args.force)
    _log_command(run_dir, "evaluate", params)
    a, p, pct = report.aggregate
    print(f"{a}/{p} = {pct:.1f}%")
    return 0


def cmd_retrospect(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    do_retrospect(run_dir, {}, _backend(args, run_dir), args.force)
    _log_command(run_dir, "retrospect", {})
    print(run_dir / "eval" / "retrospective.md")
    return 0


def cmd_extract_skills(args: argparse.Namespace) -> int:
    runs = _expand(args.runs)
    out = Path(args.out)
    backend = _backend(args, runs[0] if len(runs) == 1 else None)
    written = do_extract_skills(runs, out, backend, args.force)
    if len(runs) == 1:
        _log_command(runs[0], "extract-skills", {"out": _rel(out, runs[0])})
    for path in written:
        print(path)
    return 0


def _score_of(run_dir: Path) -> float:
    path = run_dir / "eval" / "score.json"
    if not path.exists():
        raise StageMissing(f"{run_dir} has no eval/score.json")
    return float(read_json(path)["aggregate"]["percentage"])


def cmd_compare(args: argparse.Namespace) -> int:
    baseline = {p.name: p for p in _expand(args.baseline)}
    treatment = {p.name: p for p in _expand(args.treatment)}
    common = sorted(set(baseline) & set(treatment))
    unpaired = sorted(set(baseline) ^ set(treatment))
    if unpaired:
        logger.warning("ignoring runs without a partner: %s", ", ".join(unpaired))
    pairs = [(_score_of(baseline[n]), _score_of(treatment[n])) for n in common]
    result = paired_compare(pairs)
    out = result.to_dict() | {"paired_runs": common}
    write_json(Path(args.out), out)
    print(f"{result.wins} wins / {result.losses} losses / {result.ties} ties; delta {result.mean_delta:+.1f} pp; "
          f"p1={result.p_one_sided:.3f} p2={result.p_two_sided:.3f}")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    summary = summarize_batch(_expand(args.runs))
    js, md = write_summary(summary, Path(args.out))
    print(js)
    print(md)
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    source, target = Path(args.source), Path(args.target)
    transcript = Path(args.transcript) if args.transcript else source / "transcript.jsonl"
    backend = make_backend("replay", transcript_path=transcript, record_path=target / "transcript.jsonl")
    replay_run(source, target, backend)
    print(target)
    return 0


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    """Global flags, accepted before or after the subcommand."""
    def default(value: Any) -> Any:
        return argparse.SUPPRESS if suppress else value

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--backend", choices=("live", "replay", "scripted"), default=default("scripted"))
    common.add_argument("--transcript", default=default(None),
                        help="transcript to record to (live/scripted) or read from (replay)")
    common.add_argument("--record", default=default(None), help="with --backend replay, re-record served responses here")
    common.add_argument("--script", default=default(None),
                        help="JSON rule file for the scripted backend (default: built-in demo)")
    common.add_argument("--seed", type=int, default=default(0))
    common.add_argument("--force", action="store_true", default=default(False), help="overwrite completed stages")
    common.add_argument("-v", "--verbose", action="store_true", default=default(False))
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="scs", description="Synthetic computers and long-horizon simulations.",
                                     parents=[_global_flags(suppress=False)])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("create-computer", parents=[common], help="persona -> profile -> plan -> computer")
    p.add_argument("--persona", required=True)
    p.add_argument("--run")
    p.add_argument("--runs-root", default="runs")
    p.add_argument("--run-id")
    p.add_argument("--os", choices=("windows", "macos"), default="windows")
    p.add_argument("--mirror", help="directory of files served for web downloads")
    p.add_argument("--url-map", help="JSON map of logical path -> URL for web downloads")
    p.set_defaults(func=cmd_create_computer)

    p = sub.add_parser("setup", parents=[common], help="objectives and collaborators")
    p.add_argument("--run", required=True)
    p.add_argument("--days", type=int, default=20)
    p.add_argument("--period-start")
    p.set_defaults(func=cmd_setup)

    p = sub.add_parser("simulate", parents=[common], help="weekly planning and daily execution")
    p.add_argument("--run", required=True)
    p.add_argument("--days", type=int)
    p.add_argument("--skills", help="directory of skill .json files to match by occupation")
    p.add_argument("--per-day-turn-budget", type=int, default=400)
    p.add_argument("--global-turn-budget", type=int, default=5000)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("make-rubric", parents=[common], help="draft per run, then merge")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--drafts", type=int, default=1, help="drafts per run")
    p.add_argument("--out")
    p.set_defaults(func=cmd_make_rubric)

    p = sub.add_parser("evaluate", parents=[common], help="score a run against a rubric")
    p.add_argument("--run", required=True)
    p.add_argument("--rubric")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("retrospect", parents=[common], help="write the retrospective report")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_retrospect)

    p = sub.add_parser("extract-skills", parents=[common], help="experience items -> digests -> skills")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract_skills)

    p = sub.add_parser("compare", parents=[common], help="paired baseline/treatment sign test")
    p.add_argument("--baseline", nargs="+", required=True)
    p.add_argument("--treatment", nargs="+", required=True)
    p.add_argument("--out", default="compare.json")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("stats", parents=[common], help="batch statistics")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", default="summary.json")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("replay", parents=[common], help="re-run a store's commands from its transcript")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except SCSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
