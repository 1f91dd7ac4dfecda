import json
import re
from datetime import datetime, timezone

import pytest

from scs.errors import StageAlreadyComplete, StageMissing, ValidationFailed
from scs.profile import profile_from_record
from scs.runstore import STAGES, RunStore, load_stage, new_run_id, save_stage

from conftest import load_fixture

PERSONA = "A senior financial advisor who rebuilds model portfolios every January.\n"


def test_save_is_write_once(tmp_path):
    store = RunStore(tmp_path)
    save_stage(store, "persona", PERSONA)
    with pytest.raises(StageAlreadyComplete):
        save_stage(store, "persona", PERSONA)
    save_stage(store, "persona", PERSONA, force=True)


def test_round_trip(tmp_path):
    store = RunStore(tmp_path)
    save_stage(store, "persona", PERSONA)
    record = load_fixture("advisor_profile.json")
    profile = profile_from_record(record, "advisor-01")
    save_stage(store, "profile", profile)
    assert load_stage(store, "persona") == PERSONA
    assert load_stage(store, "profile") == json.loads(json.dumps(profile.to_dict()))


def test_corruption_names_the_file(tmp_path):
    store = RunStore(tmp_path)
    save_stage(store, "persona", PERSONA)
    save_stage(store, "profile", profile_from_record(load_fixture("advisor_profile.json"), "advisor-01"))
    path = store.path("profile")
    path.write_text(path.read_text()[:40])
    with pytest.raises(ValidationFailed) as info:
        load_stage(store, "profile")
    assert str(path) in str(info.value)


def test_invalid_payload_is_not_written(tmp_path):
    store = RunStore(tmp_path)
    with pytest.raises(ValidationFailed):
        save_stage(store, "persona", "   ")
    assert not store.path("persona").exists()


def test_missing_and_unknown_stages(tmp_path):
    store = RunStore(tmp_path)
    with pytest.raises(StageMissing):
        load_stage(store, "objectives")
    with pytest.raises(StageMissing):
        load_stage(store, "objectivez")


def test_prerequisites_are_enforced(tmp_path):
    with pytest.raises(StageMissing) as info:
        save_stage(RunStore(tmp_path), "profile", {})
    assert "persona" in str(info.value)


def test_every_stage_of_the_demo_run_loads(demo_run):
    store = RunStore(demo_run)
    assert store.completed() == list(STAGES)
    for stage in STAGES:
        load_stage(store, stage)


def test_run_id_format():
    rid = new_run_id(datetime(2026, 1, 5, 9, 30, tzinfo=timezone.utc))
    assert re.fullmatch(r"20260105T093000-[0-9a-f]{6}", rid)
    assert new_run_id() != new_run_id()
