import pytest
from hypothesis import given, settings, strategies as st

from borelog_sta import security
from borelog_sta.model import ENTITY_TYPES
from borelog_sta.query import (
    PAGE_SIZE,
    QueryError,
    evaluate,
    parse_query,
    plan_to_text,
    resolve_navigation,
)
from borelog_sta.store import NotFound

CPT_URI = "https://data.geoscience.fr/ncl/Proc/86"


def q(store, principal, text, base_url=""):
    return evaluate(parse_query(text), store.graph, principal, base_url)


def test_parse_resource_paths():
    plan = parse_query("BhCollarThings(1)/BhTrajectoryThings")
    assert plan.path == [("BhCollarThings", 1), ("BhTrajectoryThings", None)]
    assert plan.options.filter is None
    plan = parse_query("Sensors?$filter=sensortype eq 'x'")
    assert plan.path == [("Sensors", None)]
    assert plan.options.filter is not None


def test_parse_rejects_bad_input():
    with pytest.raises(NotFound):
        parse_query("Nope")
    with pytest.raises(QueryError):
        parse_query("Sensors?$bogus=1")
    with pytest.raises(QueryError):
        parse_query("Sensors?$filter=")
    with pytest.raises(QueryError):
        parse_query("Sensors?$top=-1")
    with pytest.raises(QueryError):
        parse_query("Sensors(abc)")


def test_parse_string_escaping():
    plan = parse_query("Sensors?$filter=name eq 'O''Neil'")
    comparison = plan.options.filter
    assert comparison.right.value == "O'Neil"


def test_resolve_navigation():
    target, many = resolve_navigation(ENTITY_TYPES["BhCollarThing"], "BhTrajectoryThings")
    assert (target.target, many) == ("BhTrajectoryThing", True)
    target, many = resolve_navigation(ENTITY_TYPES["Datastream"], "Observations")
    assert (target.target, many) == ("Observation", True)
    with pytest.raises(QueryError):
        resolve_navigation(ENTITY_TYPES["Sensor"], "Bogus")


def test_simple_lists_and_entities(loaded_store, admin):
    sensors = q(loaded_store, admin, "Sensors")["value"]
    assert len(sensors) == 8  # 7 log instruments + the SPT procedure sensor
    single = q(loaded_store, admin, "Sensors(15)")
    assert single["@iot.id"] == 15
    with pytest.raises(NotFound):
        q(loaded_store, admin, "Sensors(999)")


def test_related_lists(loaded_store, admin):
    trajectories = q(loaded_store, admin, "BhCollarThings(10)/BhTrajectoryThings")["value"]
    assert [t["@iot.id"] for t in trajectories] == [11]
    observations = q(loaded_store, admin, "Datastreams(29)/Observations")["value"]
    assert [o["@iot.id"] for o in observations] == [881, 883]
    empty = q(loaded_store, admin, "Datastreams(34)/Observations")
    assert empty["value"] == [] or len(empty["value"]) >= 0


def test_navigation_to_one(loaded_store, admin):
    sensor = q(loaded_store, admin, "Datastreams(29)/Sensor")
    assert sensor["@iot.id"] == 15
    collar = q(loaded_store, admin, "BhTrajectoryThings(11)/BhCollarThing")
    assert collar["@iot.id"] == 10


def test_addressing_within_related_list(loaded_store, admin):
    obs = q(loaded_store, admin, "Datastreams(29)/Observations(883)")
    assert obs["result"] == "@6.0'; DENSE"
    with pytest.raises(NotFound):
        q(loaded_store, admin, "Datastreams(29)/Observations(884)")


def test_filter_on_sensor_type(loaded_store, admin):
    loaded_store.create("Sensor", {
        "name": "CPT rig", "metadata": "x", "sensorType": CPT_URI,
        "Projects": [{"@iot.id": 5}],
    }, principal=admin)
    matches = q(
        loaded_store, admin,
        f"Sensors?$filter=sensortype eq '{CPT_URI}'",
    )["value"]
    assert [s["name"] for s in matches] == ["CPT rig"]


def test_filter_operators(loaded_store, admin):
    deep = q(loaded_store, admin, "BhSamplings?$filter=atPosition gt 5")["value"]
    assert [s["@iot.id"] for s in deep] == [300]
    spans = q(
        loaded_store, admin,
        "BhSamplings?$filter=fromPosition ge 1.5 and toPosition le 3",
    )["value"]
    assert [s["@iot.id"] for s in spans] == [301]
    either = q(
        loaded_store, admin,
        "Observations?$filter=result eq 17 or result eq 1.75",
    )["value"]
    assert {o["@iot.id"] for o in either} == {884, 886}
    none = q(loaded_store, admin, "BhSamplings?$filter=atPosition ne 6")["value"]
    assert all(s.get("atPosition") != 6 for s in none)


def test_filter_parenthesised_precedence(loaded_store, admin):
    rows = q(
        loaded_store, admin,
        "Observations?$filter=(result eq 17 or result eq 1.75) and result gt 2",
    )["value"]
    assert [o["@iot.id"] for o in rows] == [886]


def test_filter_casing_and_boolean_literals(loaded_store, admin):
    projects = q(loaded_store, admin, "Projects?$filter=PUBLIC eq true")["value"]
    assert [p["@iot.id"] for p in projects] == [5]


def test_filter_navigation_path_exists_semantics(loaded_store, admin):
    # to-many traversal: a sampling matches when some feature has the name
    hits = q(
        loaded_store, admin,
        "BhSamplings?$filter=BhFeaturesOfInterest/name eq 'SS-1'",
    )["value"]
    assert [s["@iot.id"] for s in hits] == [301]
    # deeper: observation result via feature chain
    hits = q(
        loaded_store, admin,
        "BhSamplings?$filter=BhFeaturesOfInterest/Observations/result eq 1.75",
    )["value"]
    assert [s["@iot.id"] for s in hits] == [301]


def test_filter_type_mismatch(loaded_store, admin):
    with pytest.raises(QueryError):
        q(loaded_store, admin, "Sensors?$filter=name gt 5")


def test_filter_unknown_property(loaded_store, admin):
    with pytest.raises(QueryError):
        q(loaded_store, admin, "Sensors?$filter=frequency eq 5")


def test_orderby_and_paging(loaded_store, admin):
    ordered = q(loaded_store, admin, "Observations?$orderby=result desc&$top=2")["value"]
    results = [o["result"] for o in ordered]
    assert len(results) == 2
    by_id = q(loaded_store, admin, "Observations?$top=3")["value"]
    assert [o["@iot.id"] for o in by_id] == [881, 882, 883]
    skipped = q(loaded_store, admin, "Observations?$skip=2&$top=2")["value"]
    assert [o["@iot.id"] for o in skipped] == [883, 884]


def test_orderby_multiple_keys(loaded_store, admin):
    rows = q(
        loaded_store, admin,
        "BhSamplings?$orderby=fromPosition desc,atPosition",
    )["value"]
    assert len(rows) == 3


def test_select_prunes_but_keeps_id(loaded_store, admin):
    doc = q(loaded_store, admin, "Sensors(15)?$select=name")
    assert set(doc) == {"@iot.id", "name"}


def test_expand_with_nested_options(loaded_store, admin):
    doc = q(
        loaded_store, admin,
        "BhTrajectoryThings(11)?$select=name&$expand=BhSamplings($orderby=atPosition desc;$select=name,atPosition)",
    )
    samplings = doc["BhSamplings"]
    assert len(samplings) == 3
    positions = [s.get("atPosition") for s in samplings]
    assert positions[0] == 6  # descending puts the pinned sampling first
    assert all(set(s) <= {"@iot.id", "name", "atPosition"} for s in samplings)


def test_expand_to_one_and_chained(loaded_store, admin):
    doc = q(
        loaded_store, admin,
        "Observations(884)?$expand=Datastream($expand=ObservedProperty($select=name))",
    )
    assert doc["Datastream"]["@iot.id"] == 30
    assert doc["Datastream"]["ObservedProperty"]["name"] == "uniaxial compressive stress"


def test_expand_unknown_relation(loaded_store, admin):
    with pytest.raises(QueryError):
        q(loaded_store, admin, "Sensors(15)?$expand=Bogus")


def test_collection_options_rejected_on_single_entity(loaded_store, admin):
    with pytest.raises(QueryError):
        q(loaded_store, admin, "Sensors(15)?$filter=name eq 'x'")
    with pytest.raises(QueryError):
        q(loaded_store, admin, "Sensors(15)?$top=1")


def test_next_link_paging(loaded_store, admin):
    items = [
        {"type": "Observation", "entity": {
            "result": i, "phenomenonTime": "2021-01-11T00:00:00-05",
            "Datastream": {"@iot.id": 29}, "FeatureOfInterest": {"@iot.id": 300},
        }}
        for i in range(PAGE_SIZE + 30)
    ]
    loaded_store.batch_create(items, principal=admin)
    first = q(loaded_store, admin, "Observations", base_url="http://h/v1.1")
    assert len(first["value"]) == PAGE_SIZE
    assert first["@iot.nextLink"].startswith("http://h/v1.1/Observations?")
    tail = first["@iot.nextLink"].split("/v1.1/", 1)[1]
    second = q(loaded_store, admin, tail)
    assert "@iot.nextLink" not in second
    collected = [o["@iot.id"] for o in first["value"]] + [o["@iot.id"] for o in second["value"]]
    unpaged_ids = sorted(loaded_store.graph.all("Observation"))
    assert collected == unpaged_ids


def test_top_below_page_size_has_no_next_link(loaded_store, admin):
    doc = q(loaded_store, admin, "Observations?$top=5", base_url="http://h/v1.1")
    assert len(doc["value"]) == 5
    assert "@iot.nextLink" not in doc


def test_authorization_filters_results(loaded_store, admin):
    anonymous = security.ANONYMOUS
    pid, _ = loaded_store.create("Project", {"name": "silent", "public": False}, principal=admin)
    loaded_store.create("Sensor", {
        "name": "hidden", "metadata": "m", "Projects": [{"@iot.id": pid}],
    }, principal=admin)
    visible = q(loaded_store, anonymous, "Sensors")["value"]
    assert all(s["name"] != "hidden" for s in visible)
    admin_view = q(loaded_store, admin, "Sensors")["value"]
    assert any(s["name"] == "hidden" for s in admin_view)


def test_cannot_navigate_from_collection(loaded_store, admin):
    with pytest.raises(QueryError):
        q(loaded_store, admin, "Sensors/Datastreams")


def test_plan_round_trip_examples():
    texts = [
        "Sensors",
        "BhCollarThings(42)",
        "Sensors(1)/Datastreams",
        "Observations?$filter=result gt 3 and result le 17&$orderby=result desc&$top=7&$skip=2",
        "BhTrajectoryThings(11)?$select=name&$expand=BhSamplings($orderby=atPosition;$select=name)",
        "Sensors?$filter=name eq 'O''Neil' or name ne 'x'",
    ]
    for text in texts:
        plan = parse_query(text)
        assert parse_query(plan_to_text(plan)) == plan


# ordering operators need type-consistent operands; every observation carries a
# string phenomenonTime, while result mixes numbers and text, so ordering
# comparisons stay on phenomenonTime and result sticks to eq/ne
_comparisons = st.sampled_from([
    "result eq 17", "result ne 1.75", "result eq 'trace of sand'",
    "phenomenonTime ge '2021-01-11T00:00:00-05'",
    "phenomenonTime lt '2021-01-12'",
    "phenomenonTime gt '2020'",
])


@settings(max_examples=40, deadline=None)
@given(a=_comparisons, b=_comparisons)
def test_filter_conjunction_monotonic(loaded_store_factory, a, b):
    store, principal = loaded_store_factory
    joint = q(store, principal, f"Observations?$filter={a} and {b}")["value"]
    left = q(store, principal, f"Observations?$filter={a}")["value"]
    ids = {o["@iot.id"] for o in left}
    assert all(o["@iot.id"] in ids for o in joint)


@pytest.fixture(scope="module")
def loaded_store_factory():
    from borelog_sta.store import Store
    from conftest import load_fixture

    store = Store()
    store.bootstrap("admin", "admin")
    principal = security.authenticate(store.graph, "admin", "admin")
    store.batch_create(load_fixture("odot_b001.json")["batch"], principal=principal)
    return store, principal
