import json

import pytest

from borelog_sta.agslite import (
    AgsError,
    ags_to_batch,
    import_ags_lite,
    load_mapping,
    parse_ags,
)
from borelog_sta.store import Store
from borelog_sta import security

SAMPLE = "src/borelog_sta/fixtures/sample.ags"


def sample_text():
    with open(SAMPLE, encoding="utf-8") as handle:
        return handle.read()


def items_for(text=None, warnings=None):
    groups = parse_ags(text if text is not None else sample_text())
    sink = warnings.append if warnings is not None else (lambda message: None)
    return ags_to_batch(groups, load_mapping(), on_warning=sink)


def find(items, type_name, predicate=lambda entity: True):
    return [i for i in items if i["type"] == type_name and predicate(i["entity"])]


def test_parse_groups_headings_units_rows():
    groups = parse_ags(sample_text())
    assert set(groups) == {"PROJ", "LOCA", "SAMP", "ISPT", "GEOL"}
    loca = groups["LOCA"]
    assert loca.headings[0] == "LOCA_ID"
    assert loca.units == {"LOCA_FDEP": "m", "LOCA_LON": "deg",
                          "LOCA_LAT": "deg", "LOCA_GL": "m"}
    assert loca.rows[0]["LOCA_FDEP"] == "12.50"
    assert len(groups["GEOL"].rows) == 2


def test_parse_quoted_commas_and_merged_groups():
    text = (
        '"GROUP","GEOL"\n'
        '"HEADING","LOCA_ID","GEOL_DESC"\n'
        '"DATA","B1","Stiff, brown CLAY"\n'
        '"GROUP","GEOL"\n'
        '"DATA","B1","Loose SAND"\n'
    )
    groups = parse_ags(text)
    assert [r["GEOL_DESC"] for r in groups["GEOL"].rows] == [
        "Stiff, brown CLAY", "Loose SAND"]


def test_parse_error_positions():
    with pytest.raises(AgsError, match="line 1"):
        parse_ags('"WAT","x"\n')
    with pytest.raises(AgsError, match="HEADING before any GROUP"):
        parse_ags('"HEADING","A"\n')
    with pytest.raises(AgsError, match="DATA row without headings"):
        parse_ags('"GROUP","GEOL"\n"DATA","x"\n')
    with pytest.raises(AgsError, match="UNIT row without headings"):
        parse_ags('"GROUP","GEOL"\n"UNIT","m"\n')
    with pytest.raises(AgsError, match="GROUP row without a name"):
        parse_ags('"GROUP",""\n')


def test_parse_empty_text():
    assert parse_ags("") == {}
    assert items_for("") == []


def test_mapping_default_and_override(tmp_path):
    default = load_mapping()
    assert {"PROJ", "LOCA", "SAMP", "ISPT", "GEOL"} <= set(default)
    custom = tmp_path / "mapping.json"
    custom.write_text(json.dumps({"PROJ": {"name": "PROJ_NAME"}}))
    assert load_mapping(custom) == {"PROJ": {"name": "PROJ_NAME"}}


def test_project_translation():
    items = items_for()
    (project,) = find(items, "Project")
    assert project["entity"]["name"] == "Marietta river crossing"
    assert project["entity"]["properties"]["PROJ_ID"] == 121415
    assert project["entity"]["properties"]["PROJ_CLNT"] == "ODOT"


def test_location_translation():
    items = items_for()
    (collar,) = find(items, "BhCollarThing")
    assert collar["entity"]["name"] == "B-001-0-20"
    assert collar["entity"]["properties"] == {"LOCA_TYPE": "RC"}
    (trajectory,) = find(items, "BhTrajectoryThing")
    assert trajectory["entity"]["lengthHole"] == 12.5
    assert trajectory["entity"]["uom"] == "m"
    (location,) = find(items, "Location")
    assert location["entity"]["location"]["coordinates"] == [-81.7969, 39.4747, 249.51]


def test_sample_group_translation():
    items = items_for()
    (sampler,) = find(items, "BhSampler")
    assert sampler["entity"]["name"] == "SS"
    (sampling,) = find(items, "BhSampling", lambda e: e["name"].startswith("SAMP"))
    assert sampling["entity"]["fromPosition"] == 0.46
    assert sampling["entity"]["toPosition"] == 0.91
    assert sampling["entity"]["BhSampler"] == {"@iot.localKey": "ags:bhsampler:1"}
    foi = find(items, "BhFeatureOfInterest",
               lambda e: e["BhSampling"]["@iot.localKey"] == sampling["localKey"])
    types = {r["@iot.localKey"] for r in foi[0]["entity"]["BhFeatureTypes"]}
    assert types == {"ags:ft:core", "ags:ft:segment"}


def test_spt_group_translation():
    items = items_for()
    (sensor,) = find(items, "Sensor", lambda e: e["name"] == "ISPT")
    assert sensor["entity"]["properties"] == {
        "ISPT_TYPE": "S", "ISPT_HAM": "Automatic", "ISPT_ERAT": 84}
    (n_obs,) = find(items, "Observation", lambda e: e["result"] == 17)
    ds_key = n_obs["entity"]["Datastream"]["@iot.localKey"]
    (ds,) = [i for i in items if i["localKey"] == ds_key]
    assert ds["entity"]["unitOfMeasurement"] == {}
    (op,) = find(items, "ObservedProperty", lambda e: e["name"] == "ISPT_NVAL")
    assert ds["entity"]["ObservedProperty"] == {"@iot.localKey": op["localKey"]}
    (sampling,) = find(items, "BhSampling", lambda e: e.get("atPosition") == 0.46)
    assert sampling["entity"]["positionUom"] == "m"


def test_geol_group_translation():
    items = items_for()
    descriptions = find(items, "Observation", lambda e: isinstance(e["result"], str))
    assert {o["entity"]["result"] for o in descriptions} == {
        "Stiff brown sandy CLAY", "Medium dense brown silty SAND"}
    legends = find(items, "Observation", lambda e: e["result"] in (102, 201))
    assert len(legends) == 2
    # one datastream per (group, heading, borehole), shared across rows
    geol_ds = [i for i in items if i["type"] == "Datastream"
               and i["entity"]["name"].startswith("GEOL")]
    assert len(geol_ds) == 2


def test_feature_types_emitted_once():
    items = items_for()
    names = [i["entity"]["name"] for i in items if i["type"] == "BhFeatureType"]
    assert sorted(names) == ["Core", "Hole", "Point", "Segment"]


def test_every_item_has_local_key():
    items = items_for()
    keys = [i["localKey"] for i in items]
    assert all(keys)
    assert len(set(keys)) == len(keys)
    assert any(k.startswith("ags:item:") for k in keys)


def test_unknown_group_warns_and_skips():
    text = sample_text() + (
        '"GROUP","WETH"\n'
        '"HEADING","LOCA_ID","WETH_GRAD"\n'
        '"DATA","B-001-0-20","3"\n'
    )
    warnings = []
    items = items_for(text, warnings)
    assert warnings == ["skipping unknown group WETH"]
    assert not [i for i in items if "WETH" in str(i["entity"].get("name", ""))]


def test_unknown_borehole_reference_fails():
    text = (
        '"GROUP","LOCA"\n'
        '"HEADING","LOCA_ID"\n'
        '"DATA","B1"\n'
        '"GROUP","ISPT"\n'
        '"HEADING","LOCA_ID","ISPT_TOP","ISPT_NVAL"\n'
        '"DATA","B9","1.0","5"\n'
    )
    with pytest.raises(AgsError, match="unknown LOCA_ID 'B9'"):
        items_for(text)


def test_duplicate_sample_id_fails():
    text = (
        '"GROUP","LOCA"\n'
        '"HEADING","LOCA_ID"\n'
        '"DATA","B1"\n'
        '"GROUP","SAMP"\n'
        '"HEADING","LOCA_ID","SAMP_ID","SAMP_TOP","SAMP_BASE"\n'
        '"DATA","B1","S-1","1.0","1.5"\n'
        '"DATA","B1","S-1","2.0","2.5"\n'
    )
    with pytest.raises(AgsError, match="redefines sample 'S-1'"):
        items_for(text)


def test_reading_attaches_to_registered_sample():
    text = (
        '"GROUP","LOCA"\n'
        '"HEADING","LOCA_ID"\n'
        '"DATA","B1"\n'
        '"GROUP","SAMP"\n'
        '"HEADING","LOCA_ID","SAMP_ID","SAMP_TOP","SAMP_BASE"\n'
        '"DATA","B1","S-1","1.0","1.5"\n'
        '"GROUP","ISPT"\n'
        '"HEADING","LOCA_ID","SAMP_ID","ISPT_NVAL"\n'
        '"DATA","B1","S-1","12"\n'
    )
    items = items_for(text)
    assert len(find(items, "BhSampling")) == 1
    (n_obs,) = find(items, "Observation", lambda e: e["result"] == 12)
    foi_key = n_obs["entity"]["FeatureOfInterest"]["@iot.localKey"]
    (foi,) = [i for i in items if i["localKey"] == foi_key]
    types = {r["@iot.localKey"] for r in foi["entity"]["BhFeatureTypes"]}
    # a reading on a retrieved sample is about the core, not the hole wall
    assert "ags:ft:core" in types


def test_import_batch_loads_into_store(tmp_path):
    document = import_ags_lite(SAMPLE)
    assert set(document) == {"batch"}
    store = Store()
    store.bootstrap("admin", "admin")
    principal = security.authenticate(store.graph, "admin", "admin")
    created = store.batch_create(document["batch"], principal=principal)
    assert len(created) == len(document["batch"])
    collars = store.graph.all("BhCollarThing")
    assert len(collars) == 1


def test_import_ags_lite_reads_mapping_path(tmp_path):
    mapping = {"PROJ": {"name": "PROJ_NAME"}, "LOCA": {"name": "LOCA_ID"}}
    path = tmp_path / "m.json"
    path.write_text(json.dumps(mapping))
    warnings = []
    document = import_ags_lite(SAMPLE, mapping_path=path, on_warning=warnings.append)
    assert sorted(warnings) == [
        "skipping unknown group GEOL",
        "skipping unknown group ISPT",
        "skipping unknown group SAMP",
    ]
    types = {i["type"] for i in document["batch"]}
    assert types == {"Project", "BhCollarThing", "BhTrajectoryThing", "Location"}
