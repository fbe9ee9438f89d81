"""Builders that assemble entity batches for field and lab test workflows.

Each builder returns a list of batch items ({"type", "localKey", "entity"})
suitable for Store.batch_create.  Entities reference each other through local
keys, so a whole test graph loads atomically in one call.  Summary values
(N, N1_60, LL, PL, PI) are computed here with the reduction functions and
stored as ordinary observation results; raw readings keep their own
observations so the derivation can always be re-checked from what was stored.
"""

from __future__ import annotations

from .linref import convert_length
from .reductions import (
    DriveSet,
    ReductionError,
    atterberg_liquid_limit,
    atterberg_plastic_limit,
    atterberg_reduce,
    reduce_spt,
)

OM_MEASUREMENT = "http://www.opengis.net/def/observationType/OGC-OM/2.0/OM_Measurement"
CPT_SENSOR_TYPE = "https://data.geoscience.fr/ncl/Proc/86"
OBSERVED_PROPERTY_REGISTER = "https://github.com/opengeospatial/Geotech/wiki/ObservableProperties"

SPT_PROPERTIES = ("n_value", "n1_60", "driveSetIndex", "blowCount", "penetration")
ATTERBERG_PROPERTIES = (
    "liquid_limit",
    "plastic_limit",
    "plasticity_index",
    "manualCasagrandeTrialNumber",
    "blowCount",
    "waterContent",
    "manualPlasticLimitTrialNumber",
    "plWaterContent",
)
CPT_CHANNELS = ("qc", "fs", "u2")

UNITS = {
    "m": {"name": "metre", "symbol": "m", "definition": "SI base unit of length"},
    "ft": {"name": "foot", "symbol": "ft", "definition": "0.3048 m"},
    "ftUS": {"name": "US survey foot", "symbol": "ftUS", "definition": "1200/3937 m"},
    "cm": {"name": "centimetre", "symbol": "cm", "definition": "0.01 m"},
    "mm": {"name": "millimetre", "symbol": "mm", "definition": "0.001 m"},
    "%": {"name": "percent", "symbol": "%", "definition": "parts per hundred"},
    "tsf": {
        "name": "tonf[US]/ft2",
        "symbol": "tonf[US]/ft2",
        "definition": "US tons force per square foot",
    },
    "blows": {"name": "blow count", "symbol": "blows", "definition": "hammer blows per increment"},
}


class GraphError(ValueError):
    """Raised when builder input is incomplete or inconsistent."""


def ref(value) -> dict:
    """Wire reference for an entity: ids stay ids, strings become local keys."""
    if isinstance(value, dict):
        return dict(value)
    if isinstance(value, bool):
        raise GraphError(f"not an entity reference: {value!r}")
    if isinstance(value, int):
        return {"@iot.id": value}
    if isinstance(value, str):
        return {"@iot.localKey": value}
    raise GraphError(f"not an entity reference: {value!r}")


def unit(code: str) -> dict:
    known = UNITS.get(code)
    return dict(known) if known else {"name": code, "symbol": code, "definition": code}


def _item(type_name: str, key: str, entity: dict) -> dict:
    return {"type": type_name, "localKey": key, "entity": entity}


def _require_properties(mapping, names, kind: str) -> dict:
    missing = [n for n in names if n not in mapping]
    if missing:
        raise GraphError(f"missing {kind}: {', '.join(missing)}")
    return {n: mapping[n] for n in names}


def _datastream(key: str, name: str, *, thing, sensor, observed_property,
                uom=None, related=()) -> dict:
    entity = {
        "name": name,
        "observationType": OM_MEASUREMENT,
        "unitOfMeasurement": uom if uom is not None else {},
        "Thing": ref(thing),
        "Sensor": ref(sensor),
        "ObservedProperty": ref(observed_property),
    }
    if related:
        entity["RelatedDatastreams"] = [ref(k) for k in related]
    return _item("Datastream", key, entity)


def _observation(key: str, *, datastream, feature_of_interest, result,
                 related=(), parameters=None, phenomenon_time=None) -> dict:
    entity = {
        "result": result,
        "Datastream": ref(datastream),
        "FeatureOfInterest": ref(feature_of_interest),
    }
    if related:
        entity["RelatedObservations"] = [ref(k) for k in related]
    if parameters:
        entity["parameters"] = dict(parameters)
    if phenomenon_time is not None:
        entity["phenomenonTime"] = phenomenon_time
    return _item("Observation", key, entity)


def build_spt_graph(drive_sets, *, feature_of_interest, trajectory, sensor,
                    observed_properties, increment_length,
                    energy_transfer_ratio=None, overburden_factor=1.0,
                    penetration_uom="ftUS", phenomenon_time=None,
                    name="SPT", key_prefix="spt"):
    """Batch items for one standard penetration test.

    Emits five datastreams (one per property in SPT_PROPERTIES) and, for k
    recorded drive sets, 3k + 2 observations: a penetration, a blow count and
    a drive-set index per set, plus the N value and the energy-corrected
    N1_60 summary.  Cross-references tie each index observation to its blow
    count, its penetration and the N value; each blow count to its
    penetration; and N1_60 to N.  Datastreams are cross-referenced the same
    way.  When the test terminates without a valid N, the n_value observation
    stores the sentinel text instead of a number.
    """
    sets = [s if isinstance(s, DriveSet) else DriveSet(*s) for s in drive_sets]
    ops = _require_properties(observed_properties, SPT_PROPERTIES, "observed properties")
    result = reduce_spt(sets, increment_length,
                        energy_transfer_ratio=energy_transfer_ratio,
                        overburden_factor=overburden_factor)

    ds = {prop: f"{key_prefix}:ds:{prop}" for prop in SPT_PROPERTIES}
    items = [
        _datastream(ds["n_value"], f"{name} N value",
                    thing=trajectory, sensor=sensor, observed_property=ops["n_value"]),
        _datastream(ds["n1_60"], f"{name} N1 60",
                    thing=trajectory, sensor=sensor, observed_property=ops["n1_60"],
                    related=(ds["n_value"],)),
        _datastream(ds["penetration"], f"{name} penetration",
                    thing=trajectory, sensor=sensor, observed_property=ops["penetration"],
                    uom=unit(penetration_uom)),
        _datastream(ds["blowCount"], f"{name} blow count",
                    thing=trajectory, sensor=sensor, observed_property=ops["blowCount"],
                    uom=unit("blows"), related=(ds["penetration"],)),
        _datastream(ds["driveSetIndex"], f"{name} drive set index",
                    thing=trajectory, sensor=sensor, observed_property=ops["driveSetIndex"],
                    related=(ds["blowCount"], ds["penetration"], ds["n_value"])),
    ]

    n_key = f"{key_prefix}:obs:n_value"
    n_parameters = {}
    if result.termination_reason:
        n_parameters["terminationReason"] = result.termination_reason
    items.append(_observation(
        n_key, datastream=ds["n_value"], feature_of_interest=feature_of_interest,
        result=result.n_value if result.n_value is not None else result.sentinel,
        parameters=n_parameters, phenomenon_time=phenomenon_time))

    n1_parameters = {}
    if result.n60 is not None:
        n1_parameters["n60"] = result.n60
    items.append(_observation(
        f"{key_prefix}:obs:n1_60", datastream=ds["n1_60"],
        feature_of_interest=feature_of_interest, result=result.n1_60,
        related=(n_key,), parameters=n1_parameters, phenomenon_time=phenomenon_time))

    for s in sets:
        pen_key = f"{key_prefix}:obs:penetration:{s.index}"
        blow_key = f"{key_prefix}:obs:blowCount:{s.index}"
        flags = {}
        if s.weight_of_rods:
            flags["weightOfRods"] = True
        if s.weight_of_hammer:
            flags["weightOfHammer"] = True
        items.append(_observation(
            pen_key, datastream=ds["penetration"],
            feature_of_interest=feature_of_interest, result=s.penetration,
            phenomenon_time=phenomenon_time))
        items.append(_observation(
            blow_key, datastream=ds["blowCount"],
            feature_of_interest=feature_of_interest, result=s.blow_count,
            related=(pen_key,), parameters=flags, phenomenon_time=phenomenon_time))
        items.append(_observation(
            f"{key_prefix}:obs:driveSetIndex:{s.index}", datastream=ds["driveSetIndex"],
            feature_of_interest=feature_of_interest, result=s.index,
            related=(blow_key, pen_key, n_key), phenomenon_time=phenomenon_time))
    return items


def build_atterberg_graph(casagrande_trials, plastic_limit_trials, *,
                          feature_of_interest, trajectory, sensor,
                          observed_properties, phenomenon_time=None,
                          name="Atterberg limits", key_prefix="att"):
    """Batch items for one Atterberg limits determination.

    Emits eight datastreams (ATTERBERG_PROPERTIES) and one observation per
    recorded value: per Casagrande trial a trial number, a blow count and a
    water content; per plastic-limit container a water content (container
    number kept in parameters); plus the LL, PL and PI summaries.  Each trial
    number is tied to its blow count, its water content and LL; each blow
    count to its water content; each plastic-limit water content to PL; PI to
    both LL and PL.  LL and PL are deliberately not tied to each other.  The
    manual plastic-limit trial-number datastream exists for symmetry but has
    no observations, and correspondingly no datastream cross-references.

    casagrande_trials: (trial_number, blow_count, water_content_percent)
    plastic_limit_trials: (container_number, water_content_percent)
    """
    trials = [tuple(t) for t in casagrande_trials]
    containers = [tuple(t) for t in plastic_limit_trials]
    if not trials:
        raise GraphError("at least one Casagrande trial required")
    if not containers:
        raise GraphError("at least one plastic-limit container required")
    ops = _require_properties(observed_properties, ATTERBERG_PROPERTIES, "observed properties")

    ll = atterberg_liquid_limit([(bc, wc) for _, bc, wc in trials])
    pl = atterberg_plastic_limit([wc for _, wc in containers])
    result = atterberg_reduce(ll, pl)

    ds = {prop: f"{key_prefix}:ds:{prop}" for prop in ATTERBERG_PROPERTIES}
    common = {"thing": trajectory, "sensor": sensor}
    percent = unit("%")
    items = [
        _datastream(ds["liquid_limit"], f"{name} liquid limit",
                    observed_property=ops["liquid_limit"], uom=percent, **common),
        _datastream(ds["plastic_limit"], f"{name} plastic limit",
                    observed_property=ops["plastic_limit"], uom=percent, **common),
        _datastream(ds["plasticity_index"], f"{name} plasticity index",
                    observed_property=ops["plasticity_index"], uom=percent,
                    related=(ds["liquid_limit"], ds["plastic_limit"]), **common),
        _datastream(ds["waterContent"], f"{name} water content",
                    observed_property=ops["waterContent"], uom=percent, **common),
        _datastream(ds["blowCount"], f"{name} blow count",
                    observed_property=ops["blowCount"], uom=unit("blows"),
                    related=(ds["waterContent"],), **common),
        _datastream(ds["manualCasagrandeTrialNumber"], f"{name} Casagrande trial number",
                    observed_property=ops["manualCasagrandeTrialNumber"],
                    related=(ds["blowCount"], ds["waterContent"], ds["liquid_limit"]),
                    **common),
        _datastream(ds["plWaterContent"], f"{name} plastic limit water content",
                    observed_property=ops["plWaterContent"], uom=percent,
                    related=(ds["plastic_limit"],), **common),
        _datastream(ds["manualPlasticLimitTrialNumber"], f"{name} plastic limit trial number",
                    observed_property=ops["manualPlasticLimitTrialNumber"], **common),
    ]

    ll_key = f"{key_prefix}:obs:liquid_limit"
    pl_key = f"{key_prefix}:obs:plastic_limit"
    items.append(_observation(
        ll_key, datastream=ds["liquid_limit"], feature_of_interest=feature_of_interest,
        result=result.liquid_limit, phenomenon_time=phenomenon_time))
    items.append(_observation(
        pl_key, datastream=ds["plastic_limit"], feature_of_interest=feature_of_interest,
        result=result.plastic_limit, phenomenon_time=phenomenon_time))
    items.append(_observation(
        f"{key_prefix}:obs:plasticity_index", datastream=ds["plasticity_index"],
        feature_of_interest=feature_of_interest,
        result=result.plasticity_index if result.plasticity_index is not None else "NP",
        related=(ll_key, pl_key), phenomenon_time=phenomenon_time))

    for trial_number, blow_count, water_content in trials:
        wc_key = f"{key_prefix}:obs:waterContent:{trial_number}"
        blow_key = f"{key_prefix}:obs:blowCount:{trial_number}"
        items.append(_observation(
            wc_key, datastream=ds["waterContent"],
            feature_of_interest=feature_of_interest, result=water_content,
            phenomenon_time=phenomenon_time))
        items.append(_observation(
            blow_key, datastream=ds["blowCount"],
            feature_of_interest=feature_of_interest, result=blow_count,
            related=(wc_key,), phenomenon_time=phenomenon_time))
        items.append(_observation(
            f"{key_prefix}:obs:trial:{trial_number}",
            datastream=ds["manualCasagrandeTrialNumber"],
            feature_of_interest=feature_of_interest, result=trial_number,
            related=(blow_key, wc_key, ll_key), phenomenon_time=phenomenon_time))

    for container_number, water_content in containers:
        items.append(_observation(
            f"{key_prefix}:obs:plWaterContent:{container_number}",
            datastream=ds["plWaterContent"],
            feature_of_interest=feature_of_interest, result=water_content,
            related=(pl_key,), parameters={"containerNumber": container_number},
            phenomenon_time=phenomenon_time))
    return items


def build_cpt_rows(points, *, trajectory, datastreams, feature_types,
                   position_uom=None, phenomenon_time=None, key_prefix="cpt"):
    """Batch items for the rows of a CPT sounding.

    Each row becomes one BhSampling pinned at the row depth, one feature of
    interest typed by feature_types (hole and point for an in-place reading),
    and three observations: tip resistance qc, sleeve friction fs and pore
    pressure u2.  Row observations carry no cross-references; derived values
    such as the friction ratio are computed at reporting time.
    """
    ds = _require_properties(datastreams, CPT_CHANNELS, "datastreams")
    rows = [tuple(p) for p in points]
    for (d0, *_), (d1, *_) in zip(rows, rows[1:]):
        if d1 <= d0:
            raise ReductionError(f"depths not strictly increasing at {d1}")
    type_refs = [ref(t) for t in feature_types]

    items = []
    for index, row in enumerate(rows, start=1):
        if len(row) != 4:
            raise GraphError(f"row {index}: expected (depth, qc, fs, u2)")
        depth, qc, fs, u2 = row
        sampling_key = f"{key_prefix}:sampling:{index}"
        foi_key = f"{key_prefix}:foi:{index}"
        sampling = {
            "name": f"Sounding point {depth}",
            "atPosition": depth,
            "BhTrajectoryThing": ref(trajectory),
        }
        if position_uom is not None:
            sampling["positionUom"] = position_uom
        items.append(_item("BhSampling", sampling_key, sampling))
        items.append(_item("BhFeatureOfInterest", foi_key, {
            "name": f"Sounding response at {depth}",
            "BhSampling": ref(sampling_key),
            "BhFeatureTypes": [dict(r) for r in type_refs],
        }))
        for channel, value in (("qc", qc), ("fs", fs), ("u2", u2)):
            items.append(_observation(
                f"{key_prefix}:obs:{channel}:{index}", datastream=ds[channel],
                feature_of_interest=foi_key, result=value,
                phenomenon_time=phenomenon_time))
    return items


def cpt_document(fixture, *, project=None, key_prefix="cpt", feature_types=None):
    """Full batch for a CPT sounding fixture: hole, instrument and rows.

    The fixture carries the sounding name, total depth and its unit, the
    collar coordinates, the procedure text, instrument properties and the
    data rows as [depth, qc, fs, u2].  The trajectory location is drawn as a
    vertical line from the collar, which is how a cone sounding is pushed.

    Feature type names are unique per server, so when the store already has
    them pass ``feature_types={"Hole": id, "Point": id}`` to reference the
    existing entities instead of creating new ones.
    """
    name = fixture["name"]
    depth = fixture["soundingDepth"]
    uom = fixture.get("uom", "ft")
    loc = fixture["location"]
    lon, lat = loc["longitude"], loc["latitude"]
    elevation = loc.get("elevation", 0.0)
    procedure = fixture.get("procedure", "cone penetration test")
    result_uom = unit(fixture.get("resultUom", "tsf"))

    collar_key = f"{key_prefix}:collar"
    trajectory_key = f"{key_prefix}:trajectory"
    sensor_key = f"{key_prefix}:sensor"
    hole_key = f"{key_prefix}:ft:hole"
    point_key = f"{key_prefix}:ft:point"
    projects = [ref(project)] if project is not None else None

    collar = {"name": name, "description": f"CPT sounding {name}"}
    trajectory = {
        "name": f"{name} trajectory",
        "lengthHole": depth,
        "offsetHole": 0,
        "uom": uom,
        "BhCollarThing": ref(collar_key),
    }
    sensor = {
        "name": f"Cone penetrometer ({name})",
        "encodingType": "text/plain",
        "metadata": procedure,
        "sensorType": fixture.get("sensorType", CPT_SENSOR_TYPE),
    }
    if fixture.get("sensorProperties"):
        sensor["properties"] = dict(fixture["sensorProperties"])
    if projects:
        collar["Projects"] = [dict(r) for r in projects]
        trajectory["Projects"] = [dict(r) for r in projects]
        sensor["Projects"] = [dict(r) for r in projects]

    depth_m = convert_length(depth, uom, "m")
    if feature_types is not None:
        hole_key = feature_types["Hole"]
        point_key = feature_types["Point"]
        type_items = []
    else:
        type_items = [
            _item("BhFeatureType", hole_key,
                  {"name": "Hole", "definition": "https://ogc.org/Hole"}),
            _item("BhFeatureType", point_key,
                  {"name": "Point", "definition": "https://ogc.org/Point"}),
        ]
    items = type_items + [
        _item("BhCollarThing", collar_key, collar),
        _item("Location", f"{key_prefix}:collar:location", {
            "name": f"{name} collar",
            "encodingType": "application/geo+json",
            "location": {"type": "Point", "coordinates": [lon, lat, elevation]},
            "BhCollarThings": [ref(collar_key)],
        }),
        _item("BhTrajectoryThing", trajectory_key, trajectory),
        _item("Location", f"{key_prefix}:trajectory:location", {
            "name": f"{name} trajectory",
            "encodingType": "application/geo+json",
            "location": {
                "type": "LineString",
                "coordinates": [[lon, lat, elevation], [lon, lat, elevation - depth_m]],
            },
            "BhTrajectoryThings": [ref(trajectory_key)],
        }),
        _item("Sensor", sensor_key, sensor),
    ]

    channels = (
        ("qc", "Tip resistance", "qc"),
        ("fs", "Sleeve friction", "fs"),
        ("u2", "Pore pressure", "u2"),
    )
    ds_refs = {}
    for channel, label, symbol in channels:
        op_key = f"{key_prefix}:op:{channel}"
        ds_key = f"{key_prefix}:ds:{channel}"
        ds_refs[channel] = ds_key
        items.append(_item("ObservedProperty", op_key, {
            "name": f"{label} ({symbol})",
            "definition": OBSERVED_PROPERTY_REGISTER,
        }))
        items.append(_datastream(
            ds_key, f"{name} {label.lower()}", thing=trajectory_key,
            sensor=sensor_key, observed_property=op_key, uom=dict(result_uom)))

    items.extend(build_cpt_rows(
        fixture["rows"], trajectory=trajectory_key, datastreams=ds_refs,
        feature_types=(hole_key, point_key), position_uom=uom,
        phenomenon_time=fixture.get("phenomenonTime"), key_prefix=key_prefix))
    return items
