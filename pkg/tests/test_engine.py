import json
import random
from datetime import date, datetime, timedelta

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from scs.engine import (
    SimState,
    SimulationConfig,
    VirtualClock,
    WeeklyPlan,
    collaborator_turn,
    file_diff,
    handle_tool_call,
    next_working_day,
    reply_latency_draw,
    run_day,
    run_simulation,
    run_tool,
)
from scs.engine.simulation import RunContext, weekly_plan_from_record
from scs.errors import (
    BudgetExhausted,
    ConfigError,
    EmptyMessageBlocked,
    PathOutsideRoot,
    SchemaViolation,
)
from scs.gateway import ToolCall

from conftest import load_fixture, scripted

MONDAY = date(2026, 1, 5)


def call(name, **arguments):
    return ToolCall(name, arguments)


def agent(*steps):
    """Work-agent rule that plays ``steps`` in order within each day, then stops."""

    def reply(request):
        step = sum(1 for role, _ in request.messages if role == "assistant")
        if step >= len(steps):
            return {"text": "done", "tool_calls": []}
        return {"text": f"step {step}", "tool_calls": [{"name": n, "arguments": a} for n, a in steps[step]]}

    return ("work-agent", "", reply)


def replying(attach=()):
    return ("collaborator", "", {"subject": "Re", "body": "Here you go.", "attach": list(attach)})


def make_state(world, tmp_path, blank_guard=True):
    computer, objectives, collaborators = world
    clock = VirtualClock.for_period(MONDAY, 20)
    clock.start_day(MONDAY)
    return SimState(computer, collaborators, clock, tmp_path / "run", blank_guard=blank_guard)


def make_ctx(world, tmp_path, backend, advisor_profile, **config):
    state = make_state(world, tmp_path)
    return RunContext(advisor_profile, world[1], state, SimulationConfig(**config), backend)


# calendar -------------------------------------------------------------------

@pytest.mark.parametrize("day,expected", [
    (date(2026, 1, 9), date(2026, 1, 12)),
    (date(2026, 1, 5), date(2026, 1, 6)),
    (date(2026, 1, 10), date(2026, 1, 12)),
])
def test_next_working_day(day, expected):
    assert next_working_day(day) == expected


def test_clock_refuses_weekends_and_rewinds():
    clock = VirtualClock.for_period(MONDAY, 5)
    with pytest.raises(ConfigError):
        clock.start_day(date(2026, 1, 10))
    clock.start_day(date(2026, 1, 7))
    with pytest.raises(ConfigError):
        clock.start_day(MONDAY)
    with pytest.raises(ConfigError):
        VirtualClock.for_period(MONDAY, 0)


# weekly plan ----------------------------------------------------------------

def week_one():
    return [MONDAY + timedelta(days=n) for n in range(5)]


def test_week_one_plan(advisor_world):
    _, objectives, collaborators = advisor_world
    plan = weekly_plan_from_record(load_fixture("week1_plan.json"), 1, week_one(), objectives, collaborators, "windows")
    outreach = plan.for_day(MONDAY)[1]
    assert (outreach.time, outreach.kind, outreach.deliverable_id) == ("10:30", "outreach", "D1")
    assert outreach.contacts == ["patricia-huang"]
    assert len(plan.activities) == 4


def test_saturday_activity_is_rejected(advisor_world):
    _, objectives, collaborators = advisor_world
    record = load_fixture("week1_plan.json")
    record["activities"][0]["date"] = "2026-01-10"
    with pytest.raises(SchemaViolation):
        weekly_plan_from_record(record, 1, week_one(), objectives, collaborators, "windows")


def test_unknown_deliverable_is_rejected(advisor_world):
    _, objectives, collaborators = advisor_world
    record = load_fixture("week1_plan.json")
    record["activities"][1]["deliverable_id"] = "D9"
    with pytest.raises(SchemaViolation):
        weekly_plan_from_record(record, 1, week_one(), objectives, collaborators, "windows")


# tools ----------------------------------------------------------------------

PDF = "D:/Research/VCMM/VCMM_ReturnProjections_Summary_2025.pdf"


def test_read_file_returns_canonical_bytes(advisor_world, tmp_path):
    state = make_state(advisor_world, tmp_path)
    result = handle_tool_call(state, call("read_file", path=PDF))
    assert result.output.encode("utf-8") == state.computer.path_for(PDF).read_bytes()
    assert state.reads[-1]["path"] == PDF


def test_blank_message_is_blocked(advisor_world, tmp_path):
    state = make_state(advisor_world, tmp_path)
    with pytest.raises(EmptyMessageBlocked):
        handle_tool_call(state, call("send_message", recipient="David Hartley", body="  \n"))
    assert state.messages == []
    unguarded = make_state(advisor_world, tmp_path, blank_guard=False)
    assert handle_tool_call(unguarded, call("send_message", recipient="David Hartley", body="")).ok


@pytest.mark.parametrize("path", ["../private", "drives/../../private", "D:/../private/x",
                                  "E:/x.txt", "/etc/passwd"])
def test_paths_outside_the_computer(advisor_world, tmp_path, path):
    state = make_state(advisor_world, tmp_path)
    result = run_tool(state, call("list_dir", path=path))
    assert not result.ok
    assert result.error_code in ("PathOutsideRoot", "BadPathSyntax")


def test_private_host_path_is_refused(advisor_world, tmp_path):
    state = make_state(advisor_world, tmp_path)
    with pytest.raises(PathOutsideRoot):
        handle_tool_call(state, call("read_file", path=str(state.computer.private_store / "david-hartley")))


def test_sidecars_are_reserved(advisor_world, tmp_path):
    state = make_state(advisor_world, tmp_path)
    result = run_tool(state, call("read_file", path=PDF + ".meta.json"))
    assert result.error_code == "ReservedPath"


# collaborators --------------------------------------------------------------

def test_reply_latency_window(advisor_world, tmp_path):
    state = make_state(advisor_world, tmp_path)
    state.clock.current = datetime(2026, 1, 5, 10, 30)
    handle_tool_call(state, call("send_message", recipient="David Hartley", subject="IC", body="Agenda?"))
    sent = state.messages[0]
    hartley = state.collaborators.resolve("David Hartley")
    (reply,) = collaborator_turn(hartley, [sent], state, scripted(replying()), seed=3)
    assert datetime(2026, 1, 6, 10, 30) <= reply.deliver_at <= datetime(2026, 1, 7, 10, 30)
    assert reply.deliver_at == sent.sent_at + reply_latency_draw(3, sent.message_id, 24, 48)
    # not visible until the clock reaches it
    assert state.inbox() == []
    state.clock.current = reply.deliver_at
    assert [m.message_id for m in state.inbox()] == [reply.message_id]


def test_no_pending_messages(advisor_world, tmp_path):
    state = make_state(advisor_world, tmp_path)
    assert collaborator_turn(state.collaborators.resolve("Sandra Okonkwo"), [], state, scripted(), seed=0) == []


def test_attachment_needs_an_explicit_save(advisor_world, tmp_path):
    state = make_state(advisor_world, tmp_path)
    handle_tool_call(state, call("send_message", recipient="Sandra Okonkwo", body="notes?"))
    sandra = state.collaborators.resolve("Sandra Okonkwo")
    (reply,) = collaborator_turn(sandra, [state.messages[0]], state, scripted(replying(["TriggerReview_Notes.docx"])),
                                 seed=1)
    dest = "D:/ClientWork/TriggerReview_Notes.docx"
    state.clock.current = reply.deliver_at
    assert run_tool(state, call("read_file", path=dest)).error_code == "NotFound"
    assert state.shares == []
    saved = handle_tool_call(state, call("save_attachment", message_id=reply.message_id, dest="D:/ClientWork/"))
    assert saved.output == f"saved TriggerReview_Notes.docx to {dest}"
    assert state.shares[0]["source"] == "private:sandra-okonkwo/TriggerReview_Notes.docx"
    assert handle_tool_call(state, call("read_file", path=dest)).ok


def test_save_before_delivery_is_refused(advisor_world, tmp_path):
    state = make_state(advisor_world, tmp_path)
    handle_tool_call(state, call("send_message", recipient="Sandra Okonkwo", body="notes?"))
    sandra = state.collaborators.resolve("Sandra Okonkwo")
    (reply,) = collaborator_turn(sandra, [state.messages[0]], state, scripted(replying(["TriggerReview_Notes.docx"])),
                                 seed=1)
    result = run_tool(state, call("save_attachment", message_id=reply.message_id, dest="D:/ClientWork/"))
    assert result.error_code == "UnknownMessageId"


def test_reply_cannot_attach_someone_elses_file(advisor_world, tmp_path):
    state = make_state(advisor_world, tmp_path)
    handle_tool_call(state, call("send_message", recipient="Sandra Okonkwo", body="hi"))
    sandra = state.collaborators.resolve("Sandra Okonkwo")
    with pytest.raises(SchemaViolation):
        collaborator_turn(sandra, [state.messages[0]], state, scripted(replying(["IC_Agenda_Jan2026.xlsx"])), seed=1)


# days -----------------------------------------------------------------------

EMPTY_WEEK = WeeklyPlan(1, "", [])


def test_write_then_finish(advisor_world, tmp_path, advisor_profile):
    backend = scripted(agent([("write_file", {"path": "D:/ClientWork/memo.txt", "content": "draft"})],
                             [("log_activity", {"text": "memo"}), ("finish_day", {})]))
    ctx = make_ctx(advisor_world, tmp_path, backend, advisor_profile)
    record = run_day(ctx, EMPTY_WEEK, MONDAY, backend)
    assert record.file_diff == (["D:/ClientWork/memo.txt"], [])
    assert record.activity_log[-1]["files_created"] == ["D:/ClientWork/memo.txt"]
    assert len(record.turns) == 2


def test_no_tool_calls_gives_empty_diff(advisor_world, tmp_path, advisor_profile):
    backend = scripted(agent())
    ctx = make_ctx(advisor_world, tmp_path, backend, advisor_profile)
    record = run_day(ctx, EMPTY_WEEK, MONDAY, backend)
    assert record.file_diff == ([], [])
    assert record.activity_log == []
    day_json = json.loads((tmp_path / "run/days/2026-01-05/day.json").read_text())
    assert day_json["turn_count"] == 1


def test_reading_private_path_is_an_error_turn(advisor_world, tmp_path, advisor_profile):
    private = str(advisor_world[0].private_store / "david-hartley" / "IC_Agenda_Jan2026.xlsx")
    backend = scripted(agent([("read_file", {"path": private})]))
    ctx = make_ctx(advisor_world, tmp_path, backend, advisor_profile)
    record = run_day(ctx, EMPTY_WEEK, MONDAY, backend)
    assert record.turns[0]["error"] is True
    assert record.turns[0]["results"][0]["error_code"] == "PathOutsideRoot"
    assert record.file_diff == ([], [])


def test_unknown_tool_is_an_error_turn(advisor_world, tmp_path, advisor_profile):
    backend = scripted(agent([("delete_everything", {})]))
    ctx = make_ctx(advisor_world, tmp_path, backend, advisor_profile)
    record = run_day(ctx, EMPTY_WEEK, MONDAY, backend)
    assert record.turns[0]["results"][0]["error_code"] == "UnknownTool"


def test_unlogged_writes_get_an_end_of_day_entry(advisor_world, tmp_path, advisor_profile):
    backend = scripted(agent([("write_file", {"path": "D:/ClientWork/a.txt", "content": "a"})]))
    ctx = make_ctx(advisor_world, tmp_path, backend, advisor_profile)
    record = run_day(ctx, EMPTY_WEEK, MONDAY, backend)
    assert record.activity_log[-1]["files_created"] == ["D:/ClientWork/a.txt"]


def test_per_day_budget_truncates(advisor_world, tmp_path, advisor_profile):
    backend = scripted(agent(*[[("list_dir", {"path": "D:/"})]] * 10))
    ctx = make_ctx(advisor_world, tmp_path, backend, advisor_profile, per_day_turn_budget=3)
    record = run_day(ctx, EMPTY_WEEK, MONDAY, backend)
    assert record.truncated and len(record.turns) == 3


# whole runs -----------------------------------------------------------------

def week_plan_rule():
    def reply(request):
        return {"focus": "work", "activities": []}
    return ("work-agent", "Plan the coming", reply)


def simulate(world, tmp_path, advisor_profile, steps, days=5, **config):
    computer, objectives, collaborators = world
    backend = scripted(week_plan_rule(), agent(*steps), replying())
    cfg = SimulationConfig(working_days=days, **config)
    return run_simulation(computer, objectives, collaborators, cfg, backend, advisor_profile, tmp_path / "run")


STEPS = [
    [("list_dir", {"path": "D:/Research"}), ("read_file", {"path": "D:/nope.txt"})],
    [("send_message", {"recipient": "Kevin Tran", "body": "status?"})],
    [("check_inbox", {}), ("write_file", {"path": "D:/ClientWork/n.txt", "content": "n"})],
    [("finish_day", {})],
]


def test_five_day_run(advisor_world, tmp_path, advisor_profile):
    sim = simulate(advisor_world, tmp_path, advisor_profile, STEPS)
    assert len(sim.weekly_plans) == 1
    assert [d.date for d in sim.days] == week_one()
    tel = sim.telemetry
    assert tel.turns_weekly_planning == 1
    assert tel.turns_daily_execution == sum(len(d.turns) for d in sim.days) == 20
    assert tel.error_turns == 5
    assert tel.messages_sent == 5
    # every message to Kevin is answered, and replies count once logged
    assert tel.messages_received == 5


def test_zero_days_is_a_config_error(advisor_world, tmp_path, advisor_profile):
    with pytest.raises(ConfigError):
        simulate(advisor_world, tmp_path, advisor_profile, STEPS, days=0)


def test_global_budget_persists_partial_record(advisor_world, tmp_path, advisor_profile):
    with pytest.raises(BudgetExhausted) as info:
        simulate(advisor_world, tmp_path, advisor_profile, STEPS, global_turn_budget=6)
    assert info.value.record.truncated
    sim = json.loads((tmp_path / "run/simulation.json").read_text())
    assert sim["truncated"] is True and sim["total_turns"] == 6


def test_replay_of_a_run_is_identical(advisor_world, tmp_path, advisor_profile):
    from scs.gateway import ReplayBackend, Transcript
    from scs.materialize import SyntheticComputer

    computer, objectives, collaborators = advisor_world
    transcript = Transcript()
    live = scripted(week_plan_rule(), agent(*STEPS), replying())
    live.transcript = transcript
    pristine = tmp_path / "pristine"
    import shutil

    shutil.copytree(computer.root, pristine)
    run_simulation(computer, objectives, collaborators, SimulationConfig(working_days=3, seed=5), live,
                   advisor_profile, tmp_path / "a")
    twin = SyntheticComputer.load(pristine)
    twin.private_store = computer.private_store
    run_simulation(twin, objectives, collaborators, SimulationConfig(working_days=3, seed=5),
                   ReplayBackend(transcript), advisor_profile, tmp_path / "b")
    for name in ("messages.jsonl", "days/2026-01-07/turns.jsonl", "days/2026-01-07/day.json", "weeks/week_1.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


# invariants -----------------------------------------------------------------

def test_clock_is_monotone_and_on_working_days(demo_run):
    stamps = []
    for day_dir in sorted((demo_run / "days").iterdir()):
        assert date.fromisoformat(day_dir.name).weekday() < 5
        for line in (day_dir / "turns.jsonl").read_text().splitlines():
            stamps.append(json.loads(line)["time"])
    assert stamps == sorted(stamps)


def test_no_blank_outbound_messages(demo_run):
    for line in (demo_run / "messages.jsonl").read_text().splitlines():
        msg = json.loads(line)
        if msg["sender"] == "user":
            assert msg["body"].strip()


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.lists(st.tuples(st.sampled_from(["a.txt", "b.txt", "Sub/c.txt", "ClientWork/d.txt"]),
                          st.sampled_from(["x", "y", "z"])), max_size=6))
def test_diff_matches_snapshots(advisor_world_factory, writes):
    world, base, profile = advisor_world_factory()
    steps = [[("write_file", {"path": "D:/" + p, "content": c})] for p, c in writes]
    backend = scripted(agent(*steps))
    state = make_state(world, base)
    ctx = RunContext(profile, world[1], state, SimulationConfig(), backend)
    before = state.computer.snapshot()
    record = run_day(ctx, EMPTY_WEEK, MONDAY, backend)
    assert record.file_diff == file_diff(before, state.computer.snapshot())
    logged = [p for e in record.activity_log for p in e["files_created"] + e["files_modified"]]
    assert sorted(set(logged)) == sorted(set(record.file_diff[0] + record.file_diff[1]))


@pytest.fixture
def advisor_world_factory(tmp_path_factory, vcmm_plan, advisor_profile):
    """Fresh world per hypothesis example."""
    from scs.materialize import NullFetcher, materialize_computer
    from scs.setup import collaborators_from_record, objectives_from_record, write_private_files

    from conftest import artifact_writer

    def make():
        base = tmp_path_factory.mktemp("w")
        computer = materialize_computer(vcmm_plan, base / "computer", NullFetcher(), scripted(artifact_writer()),
                                        private_store=base / "private")
        objectives = objectives_from_record(load_fixture("advisor_objectives.json"), MONDAY, 20, "windows")
        collaborators = collaborators_from_record(load_fixture("advisor_collaborators.json"))
        write_private_files(collaborators, computer.private_store)
        return (computer, objectives, collaborators), base, advisor_profile

    return make


def test_latency_draw_is_order_independent():
    draws = {m: reply_latency_draw(9, m, 1, 4) for m in ("m00001", "m00002", "m00003")}
    ids = list(draws)
    random.Random(0).shuffle(ids)
    assert {m: reply_latency_draw(9, m, 1, 4) for m in ids} == draws
    assert all(timedelta(hours=1) <= d <= timedelta(hours=4) for d in draws.values())
