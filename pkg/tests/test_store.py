import json

import pytest

from borelog_sta import security
from borelog_sta.model import ValidationFailed
from borelog_sta.store import (
    BatchError,
    Conflict,
    CorruptSnapshot,
    NotFound,
    Store,
)

from conftest import load_fixture


def test_create_assigns_sequential_ids(store, admin):
    first, doc = store.create("ObservedProperty", {"name": "op-a"}, principal=admin)
    second, _ = store.create("ObservedProperty", {"name": "op-b"}, principal=admin)
    assert (first, second) == (1, 2)
    assert doc["name"] == "op-a"


def test_read_update_delete_cycle(store, admin):
    pid, _ = store.create("Project", {"name": "p", "public": False}, principal=admin)
    assert store.read("Project", pid, principal=admin)["name"] == "p"
    updated = store.update("Project", pid, {"description": "d"}, principal=admin)
    assert updated["description"] == "d"
    store.delete("Project", pid, principal=admin)
    with pytest.raises(NotFound):
        store.read("Project", pid, principal=admin)


def test_update_cannot_change_id(store, admin):
    pid, _ = store.create("Project", {"name": "p"}, principal=admin)
    with pytest.raises(ValidationFailed):
        store.update("Project", pid, {"@iot.id": pid + 1}, principal=admin)


def test_client_supplied_ids_and_conflicts(store, admin):
    given, _ = store.create("Project", {"@iot.id": 40, "name": "p"}, principal=admin)
    assert given == 40
    with pytest.raises(Conflict):
        store.create("Project", {"@iot.id": 40, "name": "q"}, principal=admin)
    # counter advanced past the explicit id
    auto, _ = store.create("Project", {"name": "r"}, principal=admin)
    assert auto == 41


def test_dependency_checked_on_create(store, admin):
    with pytest.raises(Exception) as err:
        store.create(
            "BhTrajectoryThing",
            {"name": "t", "BhCollarThing": {"@iot.id": 123}},
            principal=admin,
        )
    assert "123" in str(err.value)


def test_restrict_delete_owned_reference(loaded_store, admin):
    # collar 10 is referenced by trajectory 11
    with pytest.raises(Conflict):
        loaded_store.delete("BhCollarThing", 10, principal=admin)


def test_restrict_delete_link_pairs(loaded_store, admin):
    # project 5 is linked to sensors and things; both ends are protected
    with pytest.raises(Conflict):
        loaded_store.delete("Project", 5, principal=admin)
    with pytest.raises(Conflict):
        loaded_store.delete("Sensor", 15, principal=admin)


def test_delete_leaf_succeeds(loaded_store, admin):
    loaded_store.delete("Observation", 884, principal=admin)
    assert loaded_store.graph.get("Observation", 884) is None


def test_batch_create_local_keys(store, admin):
    created = store.batch_create([
        {"type": "Project", "localKey": "p", "entity": {"name": "proj"}},
        {"type": "BhCollarThing", "localKey": "c",
         "entity": {"name": "hole", "Projects": [{"@iot.localKey": "p"}]}},
        {"type": "BhTrajectoryThing", "entity":
         {"name": "line", "BhCollarThing": {"@iot.localKey": "c"}}},
    ], principal=admin)
    assert set(created) == {"p", "c", "#2"}
    trajectory = store.graph.get("BhTrajectoryThing", created["#2"])
    assert trajectory["BhCollarThing"] == created["c"]


def test_batch_create_atomic_failure(store, admin):
    before = store.graph
    items = [
        {"type": "Project", "localKey": "p", "entity": {"name": "proj"}},
        {"type": "BhCollarThing", "entity": {"name": ""}},  # invalid
    ]
    with pytest.raises(BatchError) as err:
        store.batch_create(items, principal=admin)
    assert err.value.index == 1
    assert store.graph.equal_to(before)


def test_batch_unknown_local_key(store, admin):
    with pytest.raises(BatchError):
        store.batch_create([
            {"type": "BhCollarThing", "entity":
             {"name": "c", "Projects": [{"@iot.localKey": "nope"}]}},
        ], principal=admin)


def test_full_fixture_loads(loaded_store):
    graph = loaded_store.graph
    assert graph.get("BhCollarThing", 10)["name"] == "B-001-0-20"
    assert graph.get("Observation", 886)["result"] == 17
    assert len(graph.all("Observation")) == 16
    assert graph.counters["Thing"] == 11


def test_journal_replay_round_trip(tmp_path, admin):
    path = tmp_path / "journal.jsonl"
    store = Store(journal_path=str(path))
    store.bootstrap("admin", "admin")
    principal = security.authenticate(store.graph, "admin", "admin")
    store.batch_create(load_fixture("odot_b001.json")["batch"], principal=principal)
    store.update("BhCollarThing", 10, {"description": "patched"}, principal=principal)
    store.delete("Observation", 884, principal=principal)
    store.close()

    replayed = Store(journal_path=str(path))
    assert replayed.graph.equal_to(store.graph)
    replayed.close()


def test_journal_batch_is_single_line(tmp_path, admin):
    path = tmp_path / "journal.jsonl"
    store = Store(journal_path=str(path))
    store.bootstrap("admin", "admin")
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert len(lines) == 1
    assert lines[0]["op"] == "batch"
    store.close()


def test_snapshot_restore(tmp_path, loaded_store):
    path = tmp_path / "state.snapshot"
    loaded_store.snapshot(str(path))
    graph = Store.restore(str(path))
    assert graph.equal_to(loaded_store.graph)


def test_snapshot_checksum_detects_tampering(tmp_path, loaded_store):
    path = tmp_path / "state.snapshot"
    loaded_store.snapshot(str(path))
    payload = path.read_text().replace("B-001-0-20", "B-999-0-20", 1)
    path.write_text(payload)
    with pytest.raises(CorruptSnapshot):
        Store.restore(str(path))


def test_phenomenon_time_defaulted(loaded_store, admin):
    oid, doc = loaded_store.create("Observation", {
        "result": 1.0,
        "Datastream": {"@iot.id": 29},
        "FeatureOfInterest": {"@iot.id": 300},
    }, principal=admin)
    assert doc["phenomenonTime"].endswith("+00:00")
    assert doc["parameters"]["phenomenonTimeDefaulted"] is True


def test_phenomenon_time_default_survives_replay(tmp_path):
    path = tmp_path / "journal.jsonl"
    store = Store(journal_path=str(path))
    store.bootstrap("admin", "admin")
    principal = security.authenticate(store.graph, "admin", "admin")
    store.batch_create(load_fixture("odot_b001.json")["batch"], principal=principal)
    oid, doc = store.create("Observation", {
        "result": 2.0,
        "Datastream": {"@iot.id": 29},
        "FeatureOfInterest": {"@iot.id": 300},
    }, principal=principal)
    store.close()
    replayed = Store(journal_path=str(path))
    assert replayed.graph.get("Observation", oid)["phenomenonTime"] == doc["phenomenonTime"]
    replayed.close()


def test_explicit_phenomenon_time_kept(loaded_store, admin):
    oid, doc = loaded_store.create("Observation", {
        "phenomenonTime": "2021-01-11T00:00:00-05",
        "result": 3.0,
        "Datastream": {"@iot.id": 29},
        "FeatureOfInterest": {"@iot.id": 300},
    }, principal=admin)
    assert doc["phenomenonTime"] == "2021-01-11T00:00:00-05"
    assert "parameters" not in doc or not doc.get("parameters", {}).get("phenomenonTimeDefaulted")


def test_bootstrap_idempotent(store):
    roles_before = dict(store.graph.all("Role"))
    store.bootstrap("admin", "other-password")
    assert store.graph.all("Role") == roles_before
    # roles are numbered 1..5 in declaration order; read is 3
    assert store.graph.get("Role", 3)["name"] == "read"
    assert store.graph.get("User", 1)["username"] == "admin"
    assert store.graph.get("User", 2)["username"] == "read"


def test_anonymous_writes_require_credentials(loaded_store):
    with pytest.raises(security.Unauthorized):
        loaded_store.create(
            "Project", {"name": "x"}, principal=security.ANONYMOUS
        )
