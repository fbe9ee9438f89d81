"""AGS-style group/heading CSV import.

Reads the CSV-like ground-investigation transfer format (GROUP, HEADING,
UNIT, TYPE and DATA rows, all fields quoted) and emits a creation-order
batch document.  The translation follows one rule set for every test group:
the group becomes a Sensor named after it, depth headings place a
BhSampling on the borehole trajectory, headings classified as metadata land
in Sensor.properties keyed by heading, and every other heading becomes an
ObservedProperty + Datastream with one Observation per row value.

Whether a heading is metadata or a result cannot be decided mechanically,
so the split lives in an editable mapping table (fixtures/ags_mapping.json
ships a default).  Headings the table does not mention are treated as
results, which keeps every value queryable at the cost of some noisy
datastreams.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from importlib import resources

from .graphs import OBSERVED_PROPERTY_REGISTER, OM_MEASUREMENT, ref, unit

logger = logging.getLogger(__name__)

PARENT_HEADINGS = ("LOCA_ID", "SAMP_ID")


class AgsError(ValueError):
    """Raised for unparseable files or rows that cannot be mapped."""


@dataclass
class AgsGroup:
    name: str
    headings: list = field(default_factory=list)
    units: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)


def parse_ags(text: str) -> dict:
    """Parse AGS text into groups of row dicts, keyed by group name."""
    groups: dict[str, AgsGroup] = {}
    current = None
    for lineno, record in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not record or (len(record) == 1 and not record[0].strip()):
            continue
        marker, *fields = record
        marker = marker.strip().upper()
        if marker == "GROUP":
            if not fields or not fields[0].strip():
                raise AgsError(f"line {lineno}: GROUP row without a name")
            name = fields[0].strip()
            current = groups.setdefault(name, AgsGroup(name))
        elif marker == "HEADING":
            if current is None:
                raise AgsError(f"line {lineno}: HEADING before any GROUP")
            current.headings = [f.strip() for f in fields]
        elif marker == "UNIT":
            if current is None or not current.headings:
                raise AgsError(f"line {lineno}: UNIT row without headings")
            current.units = {
                h: u.strip() for h, u in zip(current.headings, fields) if u.strip()
            }
        elif marker == "TYPE":
            continue
        elif marker == "DATA":
            if current is None or not current.headings:
                raise AgsError(f"line {lineno}: DATA row without headings")
            row = {h: v.strip() for h, v in zip(current.headings, fields)}
            current.rows.append(row)
        else:
            raise AgsError(f"line {lineno}: unknown row marker {marker!r}")
    return groups


def load_mapping(path=None) -> dict:
    """Load the heading classification table; defaults to the shipped copy."""
    if path is None:
        packaged = resources.files("borelog_sta") / "fixtures" / "ags_mapping.json"
        return json.loads(packaged.read_text())
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)


def _value(text: str):
    """Numbers become numbers, everything else stays text."""
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _item(type_name, key, entity):
    return {"type": type_name, "localKey": key, "entity": entity}


class _Translator:
    def __init__(self, groups, mapping, on_warning):
        self.groups = groups
        self.mapping = mapping
        self.warn = on_warning
        self.items = []
        self.project_key = None
        self.trajectories = {}
        self.samplings = {}
        self.samplers = {}
        self.procedures = {}
        self.properties = {}
        self.datastreams = {}
        self.feature_types = {}
        self.counter = 0

    def run(self):
        order = ["PROJ", "LOCA", "SAMP"]
        names = [n for n in order if n in self.groups]
        names += [n for n in self.groups if n not in order]
        for name in names:
            group = self.groups[name]
            config = self.mapping.get(name)
            if name == "PROJ":
                self._project(group, config or {})
            elif name == "LOCA":
                self._locations(group, config or {})
            elif config is None:
                self.warn(f"skipping unknown group {name}")
            else:
                self._test_group(group, config)
        return self.items

    # -- group handlers ----------------------------------------------------

    def _project(self, group, config):
        if not group.rows:
            return
        row = group.rows[0]
        name_heading = config.get("name", "PROJ_NAME")
        name = row.get(name_heading) or row.get("PROJ_ID") or "AGS import"
        entity = {"name": name}
        extras = {h: _value(v) for h, v in row.items() if v and h != name_heading}
        if extras:
            entity["properties"] = extras
        self.project_key = "ags:project"
        self.items.append(_item("Project", self.project_key, entity))

    def _locations(self, group, config):
        name_heading = config.get("name", "LOCA_ID")
        depth_heading = config.get("finalDepth", "LOCA_FDEP")
        position_headings = {
            name_heading, depth_heading,
            config.get("longitude", "LOCA_LON"), config.get("latitude", "LOCA_LAT"),
            config.get("easting", "LOCA_NATE"), config.get("northing", "LOCA_NATN"),
            config.get("groundLevel", "LOCA_GL"),
        }
        for row in group.rows:
            loca_id = row.get(name_heading)
            if not loca_id:
                raise AgsError("LOCA row without a LOCA_ID")
            collar_key = f"ags:collar:{loca_id}"
            trajectory_key = f"ags:trajectory:{loca_id}"
            collar = {"name": loca_id}
            extras = {h: _value(v) for h, v in row.items()
                      if v and h not in position_headings}
            if extras:
                collar["properties"] = extras
            trajectory = {
                "name": f"{loca_id} trajectory",
                "uom": group.units.get(depth_heading, "m"),
                "BhCollarThing": ref(collar_key),
            }
            depth = row.get(depth_heading)
            if depth:
                trajectory["lengthHole"] = _value(depth)
            if self.project_key:
                collar["Projects"] = [ref(self.project_key)]
                trajectory["Projects"] = [ref(self.project_key)]
            self.items.append(_item("BhCollarThing", collar_key, collar))
            self.items.append(_item("BhTrajectoryThing", trajectory_key, trajectory))
            self.trajectories[loca_id] = trajectory_key
            self._collar_location(row, config, loca_id, collar_key)

    def _collar_location(self, row, config, loca_id, collar_key):
        lon = row.get(config.get("longitude", "LOCA_LON"))
        lat = row.get(config.get("latitude", "LOCA_LAT"))
        if not (lon and lat):
            lon = row.get(config.get("easting", "LOCA_NATE"))
            lat = row.get(config.get("northing", "LOCA_NATN"))
        if not (lon and lat):
            return
        coordinates = [_value(lon), _value(lat)]
        level = row.get(config.get("groundLevel", "LOCA_GL"))
        if level:
            coordinates.append(_value(level))
        self.items.append(_item("Location", f"ags:location:{loca_id}", {
            "name": loca_id,
            "encodingType": "application/geo+json",
            "location": {"type": "Point", "coordinates": coordinates},
            "BhCollarThings": [ref(collar_key)],
        }))

    def _test_group(self, group, config):
        if not group.rows:
            return
        depth = config.get("depth", {})
        metadata = set(config.get("metadata", ()))
        sampler_heading = config.get("sampler")
        procedure_heading = config.get("procedure")
        key_heading = config.get("key")
        reserved = set(PARENT_HEADINGS) | metadata | set(depth.values())
        reserved.update(h for h in (sampler_heading, procedure_heading, key_heading) if h)

        sensor_key = f"ags:sensor:{group.name}"
        sensor = {"name": group.name, "metadata": f"AGS group {group.name}"}
        sensor_properties = {
            h: _value(v) for h, v in group.rows[0].items() if v and h in metadata
        }
        if sensor_properties:
            sensor["properties"] = sensor_properties
        if self.project_key:
            sensor["Projects"] = [ref(self.project_key)]
        self.items.append(_item("Sensor", sensor_key, sensor))

        for row in group.rows:
            self._test_row(group, config, row, sensor_key, reserved)

    def _test_row(self, group, config, row, sensor_key, reserved):
        loca_id = row.get("LOCA_ID")
        if not loca_id or loca_id not in self.trajectories:
            raise AgsError(f"{group.name} row references unknown LOCA_ID {loca_id!r}")
        self.counter += 1
        depth = config.get("depth", {})
        at = row.get(depth.get("at", ""), "")
        lower = row.get(depth.get("from", ""), "")
        upper = row.get(depth.get("to", ""), "")
        position_uom = group.units.get(
            depth.get("at") or depth.get("from") or "", "m") or "m"

        sample_id = row.get("SAMP_ID", "")
        sampling_key = self.samplings.get((loca_id, sample_id)) if sample_id else None
        on_sample = sampling_key is not None
        if sampling_key is None:
            sampling_key = f"ags:sampling:{group.name}:{self.counter}"
            label = at or lower or "?"
            sampling = {
                "name": f"{group.name} {loca_id} {label}",
                "positionUom": position_uom,
                "BhTrajectoryThing": ref(self.trajectories[loca_id]),
            }
            if at:
                sampling["atPosition"] = _value(at)
            else:
                if lower:
                    sampling["fromPosition"] = _value(lower)
                if upper:
                    sampling["toPosition"] = _value(upper)
            self._attach_tooling(sampling, config, row)
            self.items.append(_item("BhSampling", sampling_key, sampling))
            if sample_id and config.get("key"):
                self.samplings[(loca_id, sample_id)] = sampling_key
        elif config.get("key"):
            raise AgsError(f"{group.name} redefines sample {sample_id!r} at {loca_id}")

        results = {h: v for h, v in row.items() if v and h not in reserved}
        if not results and not config.get("key"):
            return
        material = "Core" if on_sample else config.get("material", "Hole")
        if at:
            extent = "Point"
        elif lower and upper:
            extent = "Segment"
        else:
            extent = "Entirety"
        foi_key = f"ags:foi:{group.name}:{self.counter}"
        self.items.append(_item("BhFeatureOfInterest", foi_key, {
            "name": f"{group.name} {loca_id} #{self.counter}",
            "BhSampling": ref(sampling_key),
            "BhFeatureTypes": [self._feature_type(material), self._feature_type(extent)],
        }))
        for heading, text in results.items():
            self.items.append(_item("Observation", None, {
                "result": _value(text),
                "Datastream": ref(self._datastream(group, heading, loca_id, sensor_key)),
                "FeatureOfInterest": ref(foi_key),
            }))

    def _feature_type(self, name):
        key = self.feature_types.get(name)
        if key is None:
            key = f"ags:ft:{name.lower()}"
            self.feature_types[name] = key
            self.items.append(_item("BhFeatureType", key, {
                "name": name,
                "definition": f"https://ogc.org/{name}",
            }))
        return ref(key)

    def _attach_tooling(self, sampling, config, row):
        for heading, relation, table, type_name in (
            (config.get("sampler"), "BhSampler", self.samplers, "BhSampler"),
            (config.get("procedure"), "BhSamplingProcedure",
             self.procedures, "BhSamplingProcedure"),
        ):
            value = row.get(heading or "", "")
            if not value:
                continue
            key = table.get(value)
            if key is None:
                key = f"ags:{type_name.lower()}:{len(table) + 1}"
                table[value] = key
                self.items.append(_item(type_name, key, {"name": value}))
            sampling[relation] = ref(key)

    def _datastream(self, group, heading, loca_id, sensor_key):
        key = self.datastreams.get((group.name, heading, loca_id))
        if key is not None:
            return key
        op_key = self.properties.get(heading)
        if op_key is None:
            op_key = f"ags:op:{heading}"
            self.properties[heading] = op_key
            self.items.append(_item("ObservedProperty", op_key, {
                "name": heading,
                "definition": OBSERVED_PROPERTY_REGISTER,
            }))
        key = f"ags:ds:{group.name}:{heading}:{loca_id}"
        self.datastreams[(group.name, heading, loca_id)] = key
        symbol = group.units.get(heading)
        self.items.append(_item("Datastream", key, {
            "name": f"{group.name} {heading} at {loca_id}",
            "observationType": OM_MEASUREMENT,
            "unitOfMeasurement": unit(symbol) if symbol else {},
            "Thing": ref(self.trajectories[loca_id]),
            "Sensor": ref(sensor_key),
            "ObservedProperty": ref(op_key),
        }))
        return key


def ags_to_batch(groups, mapping, on_warning=logger.warning) -> list:
    """Translate parsed groups into batch items, in creation order."""
    items = _Translator(groups, mapping, on_warning).run()
    for index, item in enumerate(items):
        if item["localKey"] is None:
            item["localKey"] = f"ags:item:{index}"
    return items


def import_ags_lite(path, mapping_path=None, on_warning=logger.warning) -> dict:
    """Read an AGS file and return a batch document for it."""
    with open(path, encoding="utf-8") as handle:
        text = handle.read()
    groups = parse_ags(text)
    mapping = load_mapping(mapping_path)
    return {"batch": ags_to_batch(groups, mapping, on_warning)}
