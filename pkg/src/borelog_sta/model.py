"""The extended SensorThings entity model for borehole data.

Eighteen entity types: the borehole/sampling/observation core, the shared
vocabulary types, and the four security types.  Entities live as plain dicts
in internal form: scalar fields under their wire names, to-one relations as
an id, owned to-many relations as id lists.  Many-to-many relations are kept
in per-relation link sets on the graph rather than on either document.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .linref import LENGTH_UNITS, convert_length

WIRE_ID = "@iot.id"
WIRE_LOCAL_KEY = "@iot.localKey"
ROLE_NAMES = ("admin", "create", "read", "update", "delete")

# Feature-type axes: every feature of interest needs at least one of each.
MATERIAL_AXIS = ("Hole", "Core")
EXTENT_AXIS = ("Point", "Segment", "Entirety")


class ValidationFailed(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class Relation:
    """A navigation relation of an entity type.

    kind:
      owned    - stored on this document (id, or id list for to-many)
      link     - many-to-many pair kept in graph.links[link_id]
      reverse  - derived from the other side's owned relation
    """

    name: str
    target: str
    many: bool
    kind: str
    required: bool = False
    link_id: str = ""
    link_side: int = 0
    reverse_of: tuple[str, str] = ()  # (owner type, owned relation name)


@dataclass(frozen=True)
class EntityType:
    name: str
    set_name: str
    fields: tuple[str, ...]
    required: tuple[str, ...] = ()
    relations: tuple[Relation, ...] = ()

    def relation(self, name: str) -> Relation | None:
        lowered = name.lower()
        for rel in self.relations:
            if rel.name.lower() == lowered:
                return rel
        return None


def _owned(name, target, *, many=False, required=False):
    return Relation(name, target, many, "owned", required=required)


def _link(name, target, link_id, side, *, many=True):
    return Relation(name, target, many, "link", link_id=link_id, link_side=side)


def _reverse(name, target, owner, owned_name, *, many=True):
    return Relation(name, target, many, "reverse", reverse_of=(owner, owned_name))


ENTITY_TYPES: dict[str, EntityType] = {}


def _register(entity_type: EntityType):
    ENTITY_TYPES[entity_type.name] = entity_type


_register(EntityType(
    "BhCollarThing", "BhCollarThings",
    fields=("name", "description", "properties"),
    required=("name",),
    relations=(
        _link("Projects", "Project", "collar_project", 0),
        _link("Locations", "Location", "collar_location", 0),
        _owned("RelatedBhCollarThings", "BhCollarThing", many=True),
        _reverse("BhTrajectoryThings", "BhTrajectoryThing", "BhTrajectoryThing", "BhCollarThing"),
        _reverse("Datastreams", "Datastream", "Datastream", "Thing"),
    ),
))

_register(EntityType(
    "BhTrajectoryThing", "BhTrajectoryThings",
    fields=("name", "description", "lengthHole", "lengthCore", "offsetHole", "offsetCore", "uom"),
    required=("name",),
    relations=(
        _owned("BhCollarThing", "BhCollarThing", required=True),
        _link("Projects", "Project", "trajectory_project", 0),
        _link("Locations", "Location", "trajectory_location", 0),
        _reverse("BhSamplings", "BhSampling", "BhSampling", "BhTrajectoryThing"),
        _reverse("Datastreams", "Datastream", "Datastream", "Thing"),
    ),
))

_register(EntityType(
    "Location", "Locations",
    fields=("name", "description", "encodingType", "location", "properties"),
    required=("name", "encodingType", "location"),
    relations=(
        _link("BhCollarThings", "BhCollarThing", "collar_location", 1),
        _link("BhTrajectoryThings", "BhTrajectoryThing", "trajectory_location", 1),
    ),
))

_register(EntityType(
    "BhSampling", "BhSamplings",
    fields=("name", "description", "atPosition", "fromPosition", "toPosition", "positionUom", "time"),
    required=("name",),
    relations=(
        _owned("BhTrajectoryThing", "BhTrajectoryThing", required=True),
        _owned("BhSampler", "BhSampler"),
        _owned("BhSamplingProcedure", "BhSamplingProcedure"),
        _reverse("BhFeaturesOfInterest", "BhFeatureOfInterest", "BhFeatureOfInterest", "BhSampling"),
        _reverse("BhSamples", "BhFeatureOfInterest", "BhFeatureOfInterest", "BhSampling"),
    ),
))

_register(EntityType(
    "BhFeatureOfInterest", "BhFeaturesOfInterest",
    fields=("name", "description", "length", "lengthUom", "recoveryPercentage"),
    required=("name",),
    relations=(
        _owned("BhSampling", "BhSampling", required=True),
        _link("BhFeatureTypes", "BhFeatureType", "foi_featuretype", 0),
        _owned("BhSampledFeatures", "BhFeatureOfInterest", many=True),
        _reverse("BhPreparationSteps", "BhPreparationStep", "BhPreparationStep", "BhFeatureOfInterest"),
        _reverse("Observations", "Observation", "Observation", "FeatureOfInterest"),
    ),
))

_register(EntityType(
    "BhFeatureType", "BhFeatureTypes",
    fields=("name", "definition", "description"),
    required=("name",),
    relations=(
        _link("BhFeaturesOfInterest", "BhFeatureOfInterest", "foi_featuretype", 1),
    ),
))

_register(EntityType(
    "BhSampler", "BhSamplers",
    fields=("name", "description", "samplerType", "properties"),
    required=("name",),
    relations=(
        _reverse("BhSamplings", "BhSampling", "BhSampling", "BhSampler"),
    ),
))

_register(EntityType(
    "BhSamplingProcedure", "BhSamplingProcedures",
    fields=("name", "description", "properties"),
    required=("name",),
    relations=(
        _reverse("BhSamplings", "BhSampling", "BhSampling", "BhSamplingProcedure"),
    ),
))

_register(EntityType(
    "BhPreparationProcedure", "BhPreparationProcedures",
    fields=("name", "description", "properties"),
    required=("name",),
    relations=(
        _reverse("BhPreparationSteps", "BhPreparationStep", "BhPreparationStep", "BhPreparationProcedure"),
    ),
))

_register(EntityType(
    "BhPreparationStep", "BhPreparationSteps",
    fields=("name", "description", "properties"),
    relations=(
        _owned("BhFeatureOfInterest", "BhFeatureOfInterest", required=True),
        _owned("BhPreparationProcedure", "BhPreparationProcedure", required=True),
    ),
))

_register(EntityType(
    "Sensor", "Sensors",
    fields=("name", "description", "encodingType", "metadata", "sensorType", "properties"),
    required=("name", "metadata"),
    relations=(
        _link("Projects", "Project", "sensor_project", 0),
        _reverse("Datastreams", "Datastream", "Datastream", "Sensor"),
    ),
))

_register(EntityType(
    "ObservedProperty", "ObservedProperties",
    fields=("name", "definition", "description"),
    required=("name",),
    relations=(
        _reverse("Datastreams", "Datastream", "Datastream", "ObservedProperty"),
    ),
))

_register(EntityType(
    "Datastream", "Datastreams",
    fields=("name", "description", "observationType", "unitOfMeasurement"),
    required=("name",),
    relations=(
        _owned("Sensor", "Sensor", required=True),
        _owned("ObservedProperty", "ObservedProperty", required=True),
        _owned("Thing", "Thing", required=True),
        _owned("RelatedDatastreams", "Datastream", many=True),
        _reverse("Observations", "Observation", "Observation", "Datastream"),
    ),
))

_register(EntityType(
    "Observation", "Observations",
    fields=("phenomenonTime", "result", "parameters"),
    relations=(
        _owned("Datastream", "Datastream", required=True),
        _owned("FeatureOfInterest", "BhFeatureOfInterest", required=True),
        _owned("RelatedObservations", "Observation", many=True),
    ),
))

_register(EntityType(
    "Project", "Projects",
    fields=("name", "description", "properties", "public"),
    required=("name",),
    relations=(
        _link("BhCollarThings", "BhCollarThing", "collar_project", 1),
        _link("BhTrajectoryThings", "BhTrajectoryThing", "trajectory_project", 1),
        _link("Sensors", "Sensor", "sensor_project", 1),
        _reverse("UserProjectRoles", "UserProjectRole", "UserProjectRole", "Project"),
    ),
))

_register(EntityType(
    "User", "Users",
    fields=("username",),
    required=("username",),
    relations=(
        _link("Roles", "Role", "user_role", 0),
        _reverse("UserProjectRoles", "UserProjectRole", "UserProjectRole", "User"),
    ),
))

_register(EntityType(
    "Role", "Roles",
    fields=("name", "description"),
    required=("name",),
    relations=(
        _link("Users", "User", "user_role", 1),
        _reverse("UserProjectRoles", "UserProjectRole", "UserProjectRole", "Role"),
    ),
))

_register(EntityType(
    "UserProjectRole", "UserProjectRoles",
    fields=(),
    relations=(
        _owned("User", "User", required=True),
        _owned("Project", "Project", required=True),
        _owned("Role", "Role", required=True),
    ),
))

ENTITY_SETS = {et.set_name: et for et in ENTITY_TYPES.values()}
_SETS_LOWER = {name.lower(): et for name, et in ENTITY_SETS.items()}
_TYPES_LOWER = {name.lower(): et for name, et in ENTITY_TYPES.items()}

LINK_IDS = sorted({
    rel.link_id
    for et in ENTITY_TYPES.values()
    for rel in et.relations
    if rel.kind == "link"
})

# fields the server manages that never appear in wire documents
_SECRET_FIELDS = ("passwordHash", "passwordSalt")

_TIMESTAMP_RE = re.compile(
    r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(\.\d+)?(Z|[+-]\d{2}(:?\d{2})?)$"
)


def lookup_set(name: str) -> EntityType | None:
    return _SETS_LOWER.get(name.lower())


def lookup_type(name: str) -> EntityType | None:
    return _TYPES_LOWER.get(name.lower()) or lookup_set(name)


def is_timestamp(value) -> bool:
    """ISO-8601 instant with offset, or a start/end interval of two."""
    if not isinstance(value, str):
        return False
    parts = value.split("/")
    if len(parts) == 1:
        return bool(_TIMESTAMP_RE.match(value))
    if len(parts) == 2:
        return all(_TIMESTAMP_RE.match(p) for p in parts)
    return False


def _parse_ref(value, relation):
    """One wire reference: {"@iot.id": n}, {"@iot.localKey": k}, or a 1-list."""
    if isinstance(value, list):
        if not relation.many:
            if len(value) != 1:
                raise ValidationFailed(
                    [f"{relation.name}: to-one relation given {len(value)} references"]
                )
            return _parse_ref(value[0], relation)
        return [_parse_single_ref(v, relation) for v in value]
    if relation.many:
        return [_parse_single_ref(value, relation)]
    return _parse_single_ref(value, relation)


def _parse_single_ref(value, relation):
    if isinstance(value, dict):
        if WIRE_ID in value:
            ref = value[WIRE_ID]
            if not isinstance(ref, int) or isinstance(ref, bool) or ref <= 0:
                raise ValidationFailed([f"{relation.name}: id must be a positive integer"])
            return ref
        if WIRE_LOCAL_KEY in value:
            key = value[WIRE_LOCAL_KEY]
            if not isinstance(key, str) or not key:
                raise ValidationFailed([f"{relation.name}: localKey must be a non-empty string"])
            return LocalRef(key)
    raise ValidationFailed([f"{relation.name}: reference must carry {WIRE_ID} or {WIRE_LOCAL_KEY}"])


@dataclass(frozen=True)
class LocalRef:
    """Placeholder for a batch-local reference, resolved by batch_create."""

    key: str


def parse_wire_document(entity_type: EntityType, body: dict) -> dict:
    """Wire JSON -> internal document. Unknown keys are rejected."""
    if not isinstance(body, dict):
        raise ValidationFailed(["document must be a JSON object"])
    doc: dict = {}
    violations = []
    for key, value in body.items():
        if key == WIRE_ID:
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                violations.append("@iot.id must be a positive integer")
            else:
                doc["id"] = value
            continue
        if key in entity_type.fields:
            doc[key] = value
            continue
        if entity_type.name == "User" and key == "password":
            doc["password"] = value
            continue
        rel = entity_type.relation(key)
        if rel is not None and rel.kind in ("owned", "link"):
            doc[rel.name] = _parse_ref(value, rel)
            continue
        violations.append(f"unknown field {key!r}")
    if violations:
        raise ValidationFailed(violations)
    return doc


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_geometry(geometry, violations):
    if not isinstance(geometry, dict) or "type" not in geometry or "coordinates" not in geometry:
        violations.append("location: geometry must have type and coordinates")
        return
    gtype = geometry["type"]
    coords = geometry["coordinates"]
    if gtype == "Point":
        if not (isinstance(coords, list) and len(coords) in (2, 3) and all(_is_number(c) for c in coords)):
            violations.append("location: Point needs 2 or 3 numeric coordinates")
    elif gtype == "LineString":
        ok = (
            isinstance(coords, list)
            and len(coords) >= 2
            and all(
                isinstance(v, list) and len(v) in (2, 3) and all(_is_number(c) for c in v)
                for v in coords
            )
        )
        if not ok:
            violations.append("location: LineString needs at least 2 numeric vertices")
    else:
        violations.append(f"location: unsupported geometry type {gtype!r}")


def validate_feature_type_axes(type_ids, graph) -> str | None:
    """At least one material-axis and one extent-axis feature type."""
    names = set()
    for tid in type_ids:
        ft = graph.get("BhFeatureType", tid)
        if ft is not None:
            names.add(ft.get("name"))
    if not names & set(MATERIAL_AXIS):
        return "BhFeatureTypes: missing a material-axis type (Hole or Core)"
    if not names & set(EXTENT_AXIS):
        return "BhFeatureTypes: missing an extent-axis type (Point, Segment or Entirety)"
    return None


def _sampled_feature_cycle(graph, foi_id, new_targets) -> bool:
    # would foi_id -> new_targets close a cycle over BhSampledFeatures?
    seen = set()
    stack = list(new_targets)
    while stack:
        current = stack.pop()
        if current == foi_id:
            return True
        if current in seen:
            continue
        seen.add(current)
        doc = graph.get("BhFeatureOfInterest", current)
        if doc:
            stack.extend(doc.get("BhSampledFeatures", ()))
    return False


def resolve_thing(graph, thing_id):
    """A Datastream thing is either a collar or a trajectory, never both."""
    collar = graph.get("BhCollarThing", thing_id)
    trajectory = graph.get("BhTrajectoryThing", thing_id)
    if collar is not None and trajectory is not None:
        return None, "ambiguous"
    if collar is not None:
        return "BhCollarThing", collar
    if trajectory is not None:
        return "BhTrajectoryThing", trajectory
    return None, "missing"


def validate_entity(entity_type: EntityType, doc: dict, graph, *, entity_id=None) -> list[str]:
    """Every violated invariant of the (merged) document, empty when ok."""
    violations = []
    for name in entity_type.required:
        value = doc.get(name)
        if value is None or (isinstance(value, str) and not value):
            violations.append(f"{name} required")
    for rel in entity_type.relations:
        if rel.kind == "owned" and rel.required and doc.get(rel.name) is None:
            violations.append(f"{rel.name} required")

    for name in ("properties", "parameters", "unitOfMeasurement"):
        if name in entity_type.fields and doc.get(name) is not None:
            if not isinstance(doc[name], dict):
                violations.append(f"{name} must be an object")

    tname = entity_type.name
    if tname == "Location":
        if doc.get("encodingType") not in (None, "application/geo+json"):
            violations.append("encodingType must be application/geo+json")
        if doc.get("location") is not None:
            _check_geometry(doc["location"], violations)
    elif tname == "BhTrajectoryThing":
        for name in ("lengthHole", "lengthCore"):
            value = doc.get(name)
            if value is not None and (not _is_number(value) or value < 0):
                violations.append(f"{name} must be a non-negative number")
        if doc.get("uom") is not None and doc["uom"] not in LENGTH_UNITS:
            violations.append(f"uom must be one of {', '.join(LENGTH_UNITS)}")
    elif tname == "BhSampling":
        violations.extend(_validate_sampling(doc, graph))
    elif tname == "BhFeatureOfInterest":
        violations.extend(_validate_foi(doc, graph, entity_id))
    elif tname == "BhFeatureType":
        _check_unique_name(graph, "BhFeatureType", doc, entity_id, violations)
    elif tname == "Datastream":
        violations.extend(_validate_datastream(doc, graph, entity_id))
    elif tname == "Observation":
        if doc.get("phenomenonTime") is not None and not is_timestamp(doc["phenomenonTime"]):
            violations.append("phenomenonTime must be ISO-8601 with offset, or start/end interval")
        result = doc.get("result")
        if result is not None and not (_is_number(result) or isinstance(result, str)):
            violations.append("result must be a number, text or null")
    elif tname == "Role":
        if doc.get("name") is not None and doc["name"] not in ROLE_NAMES:
            violations.append(f"role name must be one of {', '.join(ROLE_NAMES)}")
    elif tname == "User":
        _check_unique_username(graph, doc, entity_id, violations)
    elif tname == "Project":
        if doc.get("public") is not None and not isinstance(doc["public"], bool):
            violations.append("public must be a boolean")

    # referenced entities must exist (LocalRefs are resolved before this runs)
    for rel in entity_type.relations:
        if rel.kind not in ("owned", "link") or rel.name not in doc:
            continue
        refs = doc[rel.name]
        refs = refs if isinstance(refs, list) else [refs]
        for ref in refs:
            if isinstance(ref, LocalRef):
                violations.append(f"{rel.name}: unresolved local key {ref.key!r}")
            elif rel.target == "Thing":
                kind, _ = resolve_thing(graph, ref)
                if kind is None:
                    violations.append(f"Thing({ref}) does not resolve to exactly one collar or trajectory")
            elif graph.get(rel.target, ref) is None:
                violations.append(f"{rel.name}: {rel.target}({ref}) does not exist")
    return violations


def _validate_sampling(doc, graph):
    violations = []
    at = doc.get("atPosition")
    frm = doc.get("fromPosition")
    to = doc.get("toPosition")
    if at is not None and (frm is not None or to is not None):
        violations.append("exclusive position fields: atPosition or fromPosition/toPosition")
    elif (frm is None) != (to is None):
        violations.append("fromPosition and toPosition must be given together")
    for name, value in (("atPosition", at), ("fromPosition", frm), ("toPosition", to)):
        if value is not None and not _is_number(value):
            violations.append(f"{name} must be a number")
            return violations
    if frm is not None and to is not None and frm >= to:
        violations.append("fromPosition must be less than toPosition")
    if doc.get("positionUom") is not None and doc["positionUom"] not in LENGTH_UNITS:
        violations.append(f"positionUom must be one of {', '.join(LENGTH_UNITS)}")
    if doc.get("time") is not None and not is_timestamp(doc["time"]):
        violations.append("time must be ISO-8601 with offset")

    trajectory = graph.get("BhTrajectoryThing", doc.get("BhTrajectoryThing"))
    if trajectory is not None and not violations:
        length = trajectory.get("lengthHole")
        traj_uom = trajectory.get("uom", "m")
        uom = doc.get("positionUom", traj_uom)
        if length is not None:
            for name, value in (("atPosition", at), ("fromPosition", frm), ("toPosition", to)):
                if value is None:
                    continue
                converted = convert_length(value, uom, traj_uom)
                if not -1e-9 <= converted <= length + 1e-9:
                    violations.append(
                        f"{name} {value} {uom} outside [0, {length}] {traj_uom} of the trajectory"
                    )
    return violations


def _validate_foi(doc, graph, entity_id):
    violations = []
    length = doc.get("length")
    if length is not None and (not _is_number(length) or length < 0):
        violations.append("length must be a non-negative number")
    if doc.get("lengthUom") is not None and doc["lengthUom"] not in LENGTH_UNITS:
        violations.append(f"lengthUom must be one of {', '.join(LENGTH_UNITS)}")
    recovery = doc.get("recoveryPercentage")
    if recovery is not None and (not _is_number(recovery) or not 0 <= recovery <= 100):
        violations.append("recoveryPercentage must be between 0 and 100")
    type_ids = [t for t in doc.get("BhFeatureTypes", []) if not isinstance(t, LocalRef)]
    if type_ids and all(graph.get("BhFeatureType", t) is not None for t in type_ids):
        axis_violation = validate_feature_type_axes(type_ids, graph)
        if axis_violation:
            violations.append(axis_violation)
    elif not doc.get("BhFeatureTypes"):
        violations.append("BhFeatureTypes: missing a material-axis type (Hole or Core)")
    sampled = [s for s in doc.get("BhSampledFeatures", []) if not isinstance(s, LocalRef)]
    if sampled and entity_id is not None and _sampled_feature_cycle(graph, entity_id, sampled):
        violations.append("BhSampledFeatures must not form a cycle")
    return violations


def _validate_datastream(doc, graph, entity_id):
    violations = []
    uom = doc.get("unitOfMeasurement")
    if uom is not None and not isinstance(uom, dict):
        violations.append("unitOfMeasurement must be an object")
    thing = doc.get("Thing")
    sensor = doc.get("Sensor")
    observed = doc.get("ObservedProperty")
    if any(isinstance(ref, LocalRef) for ref in (thing, sensor, observed)):
        return violations
    if thing is not None and sensor is not None and observed is not None:
        for other_id, other in graph.all("Datastream").items():
            if other_id == entity_id:
                continue
            if (
                other.get("Thing") == thing
                and other.get("Sensor") == sensor
                and other.get("ObservedProperty") == observed
            ):
                violations.append(
                    f"duplicate Datastream for (Thing {thing}, Sensor {sensor}, "
                    f"ObservedProperty {observed}): Datastream({other_id})"
                )
                break
    return violations


def _check_unique_name(graph, type_name, doc, entity_id, violations):
    name = doc.get("name")
    if name is None:
        return
    for other_id, other in graph.all(type_name).items():
        if other_id != entity_id and other.get("name") == name:
            violations.append(f"name {name!r} already used by {type_name}({other_id})")
            return


def _check_unique_username(graph, doc, entity_id, violations):
    username = doc.get("username")
    if username is None:
        return
    for other_id, other in graph.all("User").items():
        if other_id != entity_id and other.get("username") == username:
            violations.append(f"username {username!r} already taken")
            return


def serialize_entity(entity_type: EntityType, entity_id: int, doc: dict, graph, base_url: str = "") -> dict:
    """Internal document -> wire JSON with id, selfLink and navigation links."""
    out = {
        WIRE_ID: entity_id,
        "@iot.selfLink": f"{base_url}/{entity_type.set_name}({entity_id})",
    }
    for name in entity_type.fields:
        if name == "unitOfMeasurement":
            out[name] = doc.get(name) if doc.get(name) is not None else {}
        elif name in doc and doc[name] is not None:
            out[name] = doc[name]
    for rel in entity_type.relations:
        out[f"{rel.name}@iot.navigationLink"] = (
            f"{base_url}/{entity_type.set_name}({entity_id})/{rel.name}"
        )
    return out


def strip_secrets(doc: dict) -> dict:
    return {k: v for k, v in doc.items() if k not in _SECRET_FIELDS and k != "password"}
