import json
import os
import shutil
import tempfile
from datetime import date
from pathlib import Path

import pytest

from scs.cli import main
from scs.demo import DEMO_PERSONA, artifact_reply
from scs.fsplan import plan_from_record, policy_from_record
from scs.gateway import ScriptedBackend, ScriptedRule
from scs.materialize import NullFetcher, materialize_computer
from scs.profile import profile_from_record
from scs.setup import collaborators_from_record, objectives_from_record, write_private_files

FIXTURES = Path(__file__).parent / "fixtures"


def load_fixture(name):
    return json.loads((FIXTURES / name).read_text(encoding="utf-8"))


def scripted(*rules):
    """ScriptedBackend from (role, contains, response) triples."""
    return ScriptedBackend([ScriptedRule(*r) for r in rules])


def artifact_writer():
    """Rule that writes generic content in the family the planned file needs."""
    return ("artifact-writer", "", artifact_reply)


@pytest.fixture
def fast_scratch(tmp_path):
    """Memory-backed scratch dir when available; file-heavy loops spend their time in unlink/rename otherwise."""
    shm = Path("/dev/shm")
    if not (shm.is_dir() and os.access(shm, os.W_OK)):
        yield tmp_path
        return
    path = Path(tempfile.mkdtemp(prefix="scs-", dir=shm))
    try:
        yield path
    finally:
        shutil.rmtree(path, ignore_errors=True)


@pytest.fixture
def advisor_profile():
    return profile_from_record(load_fixture("advisor_profile.json"), "advisor-01")


@pytest.fixture
def advisor_policy():
    return policy_from_record(load_fixture("advisor_policy.json"), "windows")


@pytest.fixture
def vcmm_plan(advisor_policy):
    return plan_from_record(load_fixture("vcmm_plan.json"), advisor_policy)


@pytest.fixture
def advisor_world(tmp_path, vcmm_plan):
    """Materialized VCMM computer plus the advisor objectives and collaborators."""
    computer = materialize_computer(vcmm_plan, tmp_path / "computer", NullFetcher(), scripted(artifact_writer()),
                                    private_store=tmp_path / "private")
    objectives = objectives_from_record(load_fixture("advisor_objectives.json"), date(2026, 1, 5), 20, "windows")
    collaborators = collaborators_from_record(load_fixture("advisor_collaborators.json"))
    write_private_files(collaborators, computer.private_store)
    return computer, objectives, collaborators


def run_demo_pipeline(base, days=5, seed=7):
    """Scripted end-to-end run through the CLI; returns the run directory."""
    base = Path(base)
    base.mkdir(parents=True, exist_ok=True)
    persona = base / "persona.txt"
    persona.write_text(DEMO_PERSONA, encoding="utf-8")
    run = base / "r1"
    steps = [
        ["create-computer", "--persona", str(persona), "--run", str(run), "--run-id", "demo-run"],
        ["setup", "--run", str(run), "--days", str(days)],
        ["simulate", "--run", str(run), "--seed", str(seed)],
        ["make-rubric", "--runs", str(run), str(run)],
        ["evaluate", "--run", str(run)],
        ["retrospect", "--run", str(run)],
        ["extract-skills", "--runs", str(run), "--out", str(run / "skills")],
    ]
    for argv in steps:
        code = main(argv)
        assert code == 0, f"{argv[0]} exited {code}"
    return run


@pytest.fixture(scope="session")
def demo_run(tmp_path_factory):
    return run_demo_pipeline(tmp_path_factory.mktemp("demo"))


def random_plan(rng, n, edge_p=0.15, os_style="windows", tie_rate=0.3):
    """Random DAG plan: edges only go from lower to higher index of a random permutation."""
    from datetime import datetime, timedelta

    from scs.fsplan import DependencyEdge, FilesystemPlan, FilesystemPolicy, PlannedFile

    policy = FilesystemPolicy(datetime(2020, 1, 1), os_style, ["D"] if os_style == "windows" else ["/"])
    root = "D:/W" if os_style == "windows" else "/W"
    base = datetime(2024, 1, 1)
    stamps = [base + timedelta(hours=rng.randrange(0, 50 if rng.random() < tie_rate else 5000)) for _ in range(n)]
    files = [PlannedFile(f"id{k:02d}", f"{root}/f{rng.randrange(1000):03d}_{k}.txt", "txt", "", stamps[k])
             for k in range(n)]
    perm = list(range(n))
    rng.shuffle(perm)
    edges = [DependencyEdge(files[perm[a]].file_id, files[perm[b]].file_id)
             for a in range(n) for b in range(a + 1, n) if rng.random() < edge_p]
    return FilesystemPlan(policy, {root}, files, edges)


def min_scan_order(plan):
    """Independent oracle: repeatedly take the smallest (timestamp, path, id) file whose parents are placed."""
    files = {f.file_id: f for f in plan.files}
    parents = {fid: {e.from_id for e in plan.edges if e.to_id == fid} for fid in files}
    placed, order = set(), []
    while len(order) < len(files):
        ready = [f for fid, f in files.items() if fid not in placed and parents[fid] <= placed]
        best = min(ready, key=lambda f: (f.virtual_timestamp, f.logical_path, f.file_id))
        order.append(best.file_id)
        placed.add(best.file_id)
    return order


def write_hand_run(run, files_pre, files_post, planning, execution, collaborators, sent, received,
                   types, seconds=3600.0):
    """Minimal run store with exactly the numbers the batch report reads."""
    run.mkdir(parents=True)
    total = sum(types.values())
    dist = {k: {"count": c, "percentage": 100.0 * c / total} for k, c in types.items()}

    def stats(files, dirs, avg, top):
        return {"file_count": files, "directory_count": dirs, "avg_directory_depth": avg,
                "max_directory_depth": top, "type_distribution": dist, "size_stats": {}}

    (run / "stats_pre.json").write_text(json.dumps(stats(files_pre, 10, 2.0, 4)))
    (run / "stats_post.json").write_text(json.dumps(stats(files_post, 11, 2.5, 5)))
    (run / "collaborators.json").write_text(json.dumps({"collaborators": [{}] * collaborators}))
    (run / "timing.json").write_text(json.dumps({"wall_clock_seconds": seconds}))
    (run / "weeks").mkdir()
    (run / "weeks" / "week_1.json").write_text(json.dumps({"turns": [{"index": k, "error": False}
                                                                     for k in range(planning)]}))
    day = run / "days" / "2026-01-05"
    day.mkdir(parents=True)
    (day / "turns.jsonl").write_text("".join(json.dumps({"index": k, "error": False}) + "\n"
                                             for k in range(execution)))
    rows = [{"sender": "user", "recipient": "a"}] * sent + [{"sender": "a", "recipient": "user"}] * received
    (run / "messages.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    return run
