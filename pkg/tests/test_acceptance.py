"""One test per acceptance criterion, each with its runtime limit and a PASS/FAIL line."""

import json
import os
import random
import shutil
import time
import zlib
from contextlib import contextmanager
from datetime import date, datetime
from pathlib import Path

import pytest

from scs.cli import main
from scs.engine import SimState, SimulationConfig, VirtualClock, WeeklyPlan, compute_telemetry, run_day
from scs.engine.simulation import RunContext
from scs.engine.tools import private_digests
from scs.evaluate import Rubric, RubricItem, aggregate_scores, load_retrospective
from scs.experience import paired_compare, sign_test
from scs.fsplan import (
    DependencyEdge,
    FilesystemPlan,
    FilesystemPolicy,
    PlannedFile,
    instantiation_order,
    validate_plan,
)
from scs.materialize import NullFetcher, SyntheticComputer, map_logical_path, materialize_computer, unmap_physical_path
from scs.profile import profile_from_record
from scs.runstore import RunStore
from scs.setup import collaborators_from_record, objectives_from_record, write_private_files
from scs.stats_report import summarize_batch

from conftest import (
    artifact_writer,
    load_fixture,
    min_scan_order,
    random_plan,
    run_demo_pipeline,
    scripted,
    write_hand_run,
)


@pytest.fixture
def criterion(capsys):
    """Time a block against its limit and print one PASS/FAIL line."""

    @contextmanager
    def run(number, limit):
        start = time.perf_counter()
        try:
            yield
            elapsed = time.perf_counter() - start
            assert elapsed < limit, f"took {elapsed:.2f}s, limit {limit}s"
        except BaseException as exc:
            with capsys.disabled():
                print(f"\nFAIL criterion {number}: {type(exc).__name__}: {exc}")
            raise
        with capsys.disabled():
            print(f"\nPASS criterion {number} ({elapsed:.2f}s < {limit}s)")

    return run


def test_criterion_1_sign_test(criterion):
    with criterion(1, 1.0):
        one, two = sign_test(105, 67)
        assert round(one, 3) == 0.002
        assert round(two, 3) == 0.005


def test_criterion_2_score_aggregation(criterion):
    awards = [(127, 168), (164, 186), (97, 166), (137, 180), (80, 146)]
    with criterion(2, 1.0):
        items, per_item = [], {}
        for d, (awarded, possible) in enumerate(awards, start=1):
            left, k = awarded, 0
            while possible > 0:
                pts = min(8, possible)
                iid = f"D{d}-{k}"
                items.append(RubricItem(iid, "requirement", pts, "spec", f"D{d}"))
                per_item[iid] = min(pts, left)
                left -= per_item[iid]
                possible -= pts
                k += 1
        report = aggregate_scores(Rubric(items), per_item)
        assert report.aggregate[:2] == (605, 846)
        assert abs(report.percentage - 71.5) <= 0.05


def test_criterion_3_paired_comparison(criterion):
    with criterion(3, 1.0):
        deltas = [9.0] * 80 + [10.0] * 3 + [-3.0] * 16 + [-2.0]
        result = paired_compare([(61.6, 61.6 + d) for d in deltas])
        assert f"{result.mean_delta:+.1f}" == "+7.0"
        assert round(result.mean_baseline, 1) == 61.6 and round(result.mean_treatment, 1) == 68.6
        assert (result.wins, result.losses) == (83, 17)


def _write_turn_logs(run, planning, days):
    for w, count in enumerate(planning, start=1):
        path = run / "weeks" / f"week_{w}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({"turns": [{"index": 0, "error": False}] * count}))
    for d, (turns, errors) in enumerate(days):
        day = run / "days" / f"2026-01-{d + 1:02d}"
        day.mkdir(parents=True)
        (day / "turns.jsonl").write_text("".join(json.dumps({"index": k, "error": k < errors}) + "\n"
                                                 for k in range(turns)))


def test_criterion_4_telemetry(criterion, tmp_path):
    with criterion(4, 5.0):
        days = [(255, 10)] * 20
        days[0] = (5114 - 4 - 255 * 19, 23)
        _write_turn_logs(tmp_path / "a", [1, 1, 1, 1], days)
        tel = compute_telemetry(tmp_path / "a")
        assert (tel.turns_total, tel.error_turns, tel.error_rate_percent) == (5114, 213, 4.2)
        _write_turn_logs(tmp_path / "b", [16, 16, 16, 15], [(2209 // 20 + (n < 2209 % 20), 0) for n in range(20)])
        tel = compute_telemetry(tmp_path / "b")
        assert (tel.turns_weekly_planning, tel.turns_daily_execution, tel.turns_total) == (63, 2209, 2272)


def test_criterion_5_instantiation_order(criterion):
    with criterion(5, 10.0):
        rng = random.Random(2026)
        for _ in range(1000):
            n = rng.randint(1, 50)
            plan = random_plan(rng, n, edge_p=rng.choice([0.02, 0.1, 0.3]), os_style=rng.choice(["windows", "macos"]))
            order = instantiation_order(plan)
            assert sorted(order) == sorted(f.file_id for f in plan.files)
            pos = {fid: k for k, fid in enumerate(order)}
            assert all(pos[e.from_id] < pos[e.to_id] for e in plan.edges)
            assert instantiation_order(plan) == order
            if n <= 8:
                assert order == min_scan_order(plan)


SEGMENT_CHARS = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_- ."


def _segment(rng):
    while True:
        s = "".join(rng.choice(SEGMENT_CHARS) for _ in range(rng.randint(1, 12)))
        if s.strip(" .") == s:
            return s


def test_criterion_6_path_mapping(criterion):
    with criterion(6, 2.0):
        assert (map_logical_path("D:/Research/VCMM/VCMM_ReturnProjections_Summary_2025.pdf", "windows")
                == "drives/D/Research/VCMM/VCMM_ReturnProjections_Summary_2025.pdf")
        rng = random.Random(6)
        for _ in range(10000):
            parts = [_segment(rng) for _ in range(rng.randint(0, 6))]
            win = f"{rng.choice('CDEFGZ')}:/" + "/".join(parts)
            assert unmap_physical_path(map_logical_path(win, "windows"), "windows") == win
            mac = "/" + "/".join(parts)
            assert unmap_physical_path(map_logical_path(mac, "macos"), "macos") == mac


# confidentiality ------------------------------------------------------------

SECRETS = {
    "ada-stone": ["ada_plan.docx", "ada_costs.xlsx"],
    "bo-lin": ["bo_memo.docx"],
}


def _marker(collab, name):
    return f"MARK-{collab}-{name.split('.')[0]}"


def _secret_world(base):
    policy = FilesystemPolicy(datetime(2020, 1, 1), "windows", ["D"])
    files = [PlannedFile("a", "D:/Work/brief.docx", "docx", "brief", datetime(2025, 11, 3)),
             PlannedFile("b", "D:/Work/table.xlsx", "xlsx", "table", datetime(2025, 11, 4))]
    plan = FilesystemPlan(policy, {"D:/Work", "D:/Inbox"}, files, [DependencyEdge("a", "b")])
    template = base / "template"
    store = base / "private"
    materialize_computer(plan, template, NullFetcher(), scripted(artifact_writer()), private_store=store)
    # a planted link inside the computer must not open a way into the private store
    os.symlink(store, template / "drives" / "D" / "Shared")

    def private(collab, name):
        if name.endswith(".xlsx"):
            return {"filename": name, "sheets": [{"name": "S", "rows": [[_marker(collab, name)]]}]}
        return {"filename": name, "sections": [{"heading": "S", "body": _marker(collab, name)}]}

    record = {"collaborators": [
        {"name": "Ada Stone", "relationship": "peer", "response_latency": {"min_hours": 1, "max_hours": 3},
         "private_files": [private("ada-stone", n) for n in SECRETS["ada-stone"]]},
        {"name": "Bo Lin", "relationship": "manager", "response_latency": {"min_hours": 20, "max_hours": 30},
         "private_files": [private("bo-lin", n) for n in SECRETS["bo-lin"]]},
    ]}
    collaborators = collaborators_from_record(record)
    write_private_files(collaborators, store)
    return template, store.resolve(), collaborators


def _attacks(store):
    out = []
    for collab, names in SECRETS.items():
        for name in names:
            out += [
                f"../private/{collab}/{name}",
                str(store / collab / name),
                f"drives/D/../../../private/{collab}/{name}",
                f"D:/../private/{collab}/{name}",
                f"D:/Shared/{collab}/{name}",
                f"C:/private/{collab}/{name}",
                f"private:{collab}/{name}",
                f"drives/D/Shared/{collab}/{name}",
            ]
    return out + ["D:/Shared", "../private", str(store), "/etc/passwd"]


def _collaborator_reply(request):
    context = json.loads(request.last_message.split("CONTEXT:\n", 1)[1])
    names = sorted(context["private_files"])
    pick = zlib.crc32(context["message_id"].encode()) % (len(names) + 1)
    return {"subject": "Re", "body": "Answer.", "attach": names[:pick]}


def _episode_turns(rng, attacks, days):
    all_names = [n for names in SECRETS.values() for n in names]
    turns = []
    for _ in range(days):
        for _ in range(rng.randint(2, 6)):
            calls = []
            for _ in range(rng.randint(1, 3)):
                kind = rng.random()
                if kind < 0.35:
                    calls.append((rng.choice(["read_file", "list_dir"]), {"path": rng.choice(attacks)}))
                elif kind < 0.5:
                    calls.append(("send_message", {"recipient": rng.choice(["Ada Stone", "Bo Lin"]),
                                                   "body": "Could you send what you have?"}))
                elif kind < 0.6:
                    calls.append(("check_inbox", {}))
                elif kind < 0.75:
                    dest = "D:/Inbox/" if rng.random() < 0.8 else rng.choice(attacks)
                    calls.append(("save_attachment", {"message_id": f"m{rng.randint(1, 12):05d}",
                                                      "index": rng.randint(0, 1), "dest": dest}))
                elif kind < 0.9:
                    calls.append(("read_file", {"path": "D:/Inbox/" + rng.choice(all_names)}))
                else:
                    calls.append(("write_file", {"path": f"D:/Work/n{rng.randint(0, 3)}.txt",
                                                 "content": f"note {rng.random():.6f}"}))
            turns.append(calls)
        turns.append([("finish_day", {})])
    return turns


def _queue_agent(turns):
    queue = list(turns)

    def reply(request):
        calls = queue.pop(0) if queue else []
        return {"text": "", "tool_calls": [{"name": n, "arguments": a} for n, a in calls]}

    return ("work-agent", "", reply)


def test_criterion_7_confidentiality(criterion, fast_scratch):
    tmp_path = fast_scratch
    profile = profile_from_record(load_fixture("advisor_profile.json"), "advisor-01")
    template, store, collaborators = _secret_world(tmp_path)
    attacks = _attacks(store)
    attack_set = set(attacks)
    markers = {_marker(c, n): n for c, names in SECRETS.items() for n in names}
    secret_digests = private_digests(store)
    days = [date(2026, 1, 5), date(2026, 1, 6), date(2026, 1, 7)]
    objectives = objectives_from_record({"deliverables": [
        {"deliverable_id": "D1", "target_date": "2026-01-07", "expected_artifacts": ["D:/Work/out.docx"]}]},
        days[0], 3, "windows")
    blocked = 0
    with criterion(7, 60.0):
        for episode in range(1000):
            rng = random.Random(episode)
            root = tmp_path / "ep"
            if root.exists():
                shutil.rmtree(root)
            shutil.copytree(template, root / "computer", symlinks=True)
            computer = SyntheticComputer.load(root / "computer")
            computer.private_store = store
            backend = scripted(_queue_agent(_episode_turns(rng, attacks, len(days))),
                               ("collaborator", "", _collaborator_reply))
            clock = VirtualClock.for_period(days[0], len(days))
            state = SimState(computer, collaborators, clock, root / "run")
            ctx = RunContext(profile, objectives, state, SimulationConfig(seed=episode), backend)
            saved = set()
            for day in days:
                record = run_day(ctx, WeeklyPlan(1, "", []), day, backend)
                for turn in record.turns:
                    for call, result in zip(turn["tool_calls"], turn["results"]):
                        args = call["arguments"]
                        hostile = args.get("path") in attack_set or args.get("dest") in attack_set
                        if hostile:
                            assert not result["ok"], f"episode {episode}: {call} was allowed"
                            if call["name"] != "save_attachment":
                                # a save may be refused earlier, on its message id; still blocked
                                assert result["error_code"] == "PathOutsideRoot", (episode, call, result)
                            assert turn["error"] is True
                            blocked += 1
                            continue
                        if not result["ok"]:
                            continue
                        if call["name"] == "save_attachment":
                            saved.add(result["output"].split(" ", 2)[1])
                        if call["name"] in ("read_file", "list_dir"):
                            for marker, name in markers.items():
                                if marker in result["output"]:
                                    assert name in saved, f"episode {episode}: {name} read before it was shared"
            # any private bytes inside the computer arrived through a recorded share
            shared = {s["sha256"] for s in state.shares}
            for entry in computer.manifest.values():
                if entry.sha256 in secret_digests:
                    assert entry.sha256 in shared
    assert blocked > 1000


# end to end -----------------------------------------------------------------

def _tree(root):
    out = {}
    for dirpath, _, names in os.walk(root):
        for n in names:
            path = Path(dirpath) / n
            rel = path.relative_to(root).as_posix()
            if rel == "timing.json":
                continue
            data = path.read_bytes()
            if rel == "telemetry.json":
                parsed = json.loads(data)
                parsed.pop("wall_clock_seconds")
                data = json.dumps(parsed, sort_keys=True).encode()
            out[rel] = data
    return out


def test_criterion_8_end_to_end(criterion, tmp_path):
    with criterion(8, 120.0):
        run = run_demo_pipeline(tmp_path / "base", days=5)
        manifest = json.loads((run / "computer" / "manifest.json").read_text())
        plan = json.loads((run / "plan.json").read_text())
        assert len(plan["files"]) >= 20
        assert len(plan["edges"]) >= 3
        sim = json.loads((run / "simulation.json").read_text())
        assert len(sim["days"]) == 5
        assert len(json.loads((run / "collaborators.json").read_text())["collaborators"]) >= 2
        assert len(list((run / "eval" / "rubric_drafts").glob("draft_*.json"))) == 2
        rubric = json.loads((run / "eval" / "rubric.json").read_text())
        assert rubric["provenance"] and all(rubric["provenance"].values())
        score = json.loads((run / "eval" / "score.json").read_text())
        assert score["aggregate"]["awarded"] == sum(score["per_item"].values())
        assert len(load_retrospective(run).sections) == 7
        assert (run / "experience" / "items.jsonl").read_text().strip()
        assert list((run / "skills").glob("*.md"))
        assert RunStore(run).completed()[-1] == "experience"
        assert len(manifest["files"]) >= 20

        copy = tmp_path / "replayed"
        assert main(["replay", "--source", str(run), "--target", str(copy)]) == 0
        original, replayed = _tree(run), _tree(copy)
        assert sorted(original) == sorted(replayed)
        assert [k for k in original if original[k] != replayed[k]] == []


# diagnostics ----------------------------------------------------------------

def _plan(stamps, edges=(), dirs=("D:/A",), paths=None):
    policy = FilesystemPolicy(datetime(2020, 1, 1), "windows", ["D"])
    paths = paths or [f"D:/A/{n}.txt" for n in range(len(stamps))]
    files = [PlannedFile(f"x{n}", p, "txt", "", datetime.fromisoformat(s)) for n, (p, s) in enumerate(zip(paths, stamps))]
    return FilesystemPlan(policy, set(dirs), files, [DependencyEdge(a, b) for a, b in edges])


def test_criterion_9_plan_diagnostics(criterion):
    cases = {
        "cycle": (_plan(["2024-01-01", "2024-01-01"], edges=[("x0", "x1"), ("x1", "x0")]),
                  ("fatal", "CycleDetected")),
        "unknown-id": (_plan(["2024-01-01"], edges=[("x0", "x9")]), ("fatal", "UnknownFileId")),
        "duplicate-path": (_plan(["2024-01-01", "2024-01-02"], paths=["D:/A/b.txt", "D:/A/b.txt"]),
                           ("fatal", "DuplicatePath")),
        "orphan-directory": (_plan(["2024-01-01"], dirs=(), paths=["D:/A/b.txt"]), ("fatal", "OrphanDirectory")),
        "timestamp-order": (_plan(["2025-07-22", "2025-02-14"], edges=[("x0", "x1")]),
                            ("warning", "TimestampOrderViolation")),
    }
    with criterion(9, 1.0):
        for name, (plan, expected) in cases.items():
            found = [(d.severity, d.code) for d in validate_plan(plan)]
            assert found == [expected], f"{name}: {found}"


def test_criterion_10_batch_statistics(criterion, tmp_path):
    with criterion(10, 5.0):
        runs = [
            write_hand_run(tmp_path / "a", 80, 85, 10, 300, 5, 4, 3, {"docx": 5, "xlsx": 3, "pdf": 2}, 1800.0),
            write_hand_run(tmp_path / "b", 95, 99, 12, 500, 7, 6, 6, {"docx": 4, "pptx": 1}, 3600.0),
            write_hand_run(tmp_path / "c", 110, 120, 14, 400, 6, 2, 1, {"pdf": 3, "txt": 2}, 5400.0),
        ]
        summary = summarize_batch(runs)
        m = summary.metrics
        assert (m["files_pre"].mean, m["files_pre"].median, m["files_pre"].min, m["files_pre"].max) == (95, 95, 80, 110)
        assert (m["files_post"].mean, m["files_post"].median) == (pytest.approx(304 / 3), 99)
        assert (m["turns_total"].mean, m["turns_total"].median, m["turns_total"].min, m["turns_total"].max) == \
            (pytest.approx(1236 / 3), 414, 310, 512)
        assert (m["communications"].mean, m["communications"].min, m["communications"].max) == (pytest.approx(22 / 3), 3, 12)
        assert m["wall_clock_hours"].mean == pytest.approx(1.0)
        assert m["collaborators"].median == 6
        dist = summary.type_distribution
        assert dist["docx"][0] == 9 and dist["pdf"][0] == 5
        assert abs(sum(p for _, p in dist.values()) - 100.0) <= 0.1


@pytest.mark.skipif(not os.environ.get("SCS_API_BASE"), reason="SCS_API_BASE not set; live smoke test skipped")
def test_criterion_11_live_smoke(criterion, tmp_path):
    persona = tmp_path / "persona.txt"
    persona.write_text("A civil engineer who inspects bridges.", encoding="utf-8")
    with criterion(11, 600.0):
        code = main(["create-computer", "--backend", "live", "--persona", str(persona), "--run", str(tmp_path / "r")])
        assert code == 0
