"""Authentication and the project-scoped rights matrix.

Rights come in two shapes: roles linked directly to a user apply to the whole
service, roles granted through a UserProjectRole apply only to entities whose
project scope contains that project.  Every entity row resolves to a project
scope through a fixed derivation chain (observation -> datastream -> thing ->
projects, feature of interest -> sampling -> trajectory, and so on); shared
vocabulary rows (observed properties, feature types, roles) have the empty,
global scope.  Decisions are pure functions of (principal, graph snapshot).
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
from dataclasses import dataclass, field

from .model import resolve_thing

WRITE_ACTIONS = ("create", "update", "delete")
ACTIONS = ("create", "read", "update", "delete", "admin")

# matrix row for each entity type; unlisted aliases resolve in _row_of
_ROW_OF_TYPE = {
    "Project": "project",
    "User": "user",
    "Role": "role",
    "UserProjectRole": "upr",
    "ObservedProperty": "obsprop",
    "BhFeatureType": "obsprop",
    "Sensor": "sensor",
    "BhCollarThing": "thing",
    "BhTrajectoryThing": "thing",
    "Location": "thing",
    "BhSampling": "sampling",
    "BhFeatureOfInterest": "sampling",
    "BhPreparationStep": "sampling",
    "BhSampler": "sampling",
    "BhSamplingProcedure": "sampling",
    "BhPreparationProcedure": "sampling",
    "Datastream": "datastream",
    "Observation": "observation",
}


class Unauthorized(Exception):
    """Missing or invalid credentials."""


class Forbidden(Exception):
    """Authenticated but not allowed."""


@dataclass(frozen=True)
class Principal:
    user_id: int | None = None
    username: str | None = None
    global_roles: frozenset = frozenset()
    project_grants: dict = field(default_factory=dict)

    @property
    def anonymous(self) -> bool:
        return self.user_id is None

    @property
    def is_admin(self) -> bool:
        return "admin" in self.global_roles


ANONYMOUS = Principal()


@dataclass(frozen=True)
class Decision:
    allow: bool
    reason: str

    def __bool__(self) -> bool:
        return self.allow


def _allow(reason: str) -> Decision:
    return Decision(True, reason)


def _deny(reason: str) -> Decision:
    return Decision(False, reason)


# -- credentials --------------------------------------------------------------


def new_salt() -> str:
    return secrets.token_hex(16)


def hash_password(password: str, salt: str) -> str:
    digest = hashlib.pbkdf2_hmac("sha256", password.encode(), bytes.fromhex(salt), 20000)
    return digest.hex()


def build_principal(graph, user_id: int) -> Principal:
    user = graph.get("User", user_id)
    if user is None:
        return ANONYMOUS
    global_roles = set()
    for role_id in graph.link_targets("user_role", 0, user_id):
        role = graph.get("Role", role_id)
        if role is not None:
            global_roles.add(role.get("name"))
    grants: dict[int, set] = {}
    for upr in graph.all("UserProjectRole").values():
        if upr.get("User") != user_id:
            continue
        role = graph.get("Role", upr.get("Role"))
        if role is not None:
            grants.setdefault(upr.get("Project"), set()).add(role.get("name"))
    return Principal(
        user_id,
        user.get("username"),
        frozenset(global_roles),
        {pid: frozenset(names) for pid, names in grants.items()},
    )


def authenticate(graph, username: str | None, password: str | None) -> Principal:
    if username is None:
        return ANONYMOUS
    for user_id, doc in graph.all("User").items():
        if doc.get("username") != username:
            continue
        salt = doc.get("passwordSalt")
        expected = doc.get("passwordHash")
        if (
            salt
            and expected
            and password is not None
            and hmac.compare_digest(hash_password(password, salt), expected)
        ):
            return build_principal(graph, user_id)
        break
    raise Unauthorized("invalid credentials")


# -- project scope ------------------------------------------------------------


def _own_links(graph, doc, entity_id, rel_name, link_id, side):
    # a document being created still carries its link refs inline
    if doc is not None and rel_name in doc:
        return list(doc[rel_name])
    if entity_id is None:
        return []
    return graph.link_targets(link_id, side, entity_id)


def scope_of(graph, type_name: str, entity_id=None, doc=None) -> frozenset:
    """Project ids an entity belongs to, via the documented derivation chains."""
    if doc is None and entity_id is not None:
        doc = graph.get(type_name, entity_id)
    if type_name == "Project":
        return frozenset() if entity_id is None else frozenset({entity_id})
    if type_name == "BhCollarThing":
        return frozenset(_own_links(graph, doc, entity_id, "Projects", "collar_project", 0))
    if type_name == "BhTrajectoryThing":
        own = set(_own_links(graph, doc, entity_id, "Projects", "trajectory_project", 0))
        collar_id = doc.get("BhCollarThing") if doc else None
        if collar_id is not None:
            own |= scope_of(graph, "BhCollarThing", entity_id=collar_id)
        return frozenset(own)
    if type_name == "Location":
        scope = set()
        for cid in _own_links(graph, doc, entity_id, "BhCollarThings", "collar_location", 1):
            scope |= scope_of(graph, "BhCollarThing", entity_id=cid)
        for tid in _own_links(graph, doc, entity_id, "BhTrajectoryThings", "trajectory_location", 1):
            scope |= scope_of(graph, "BhTrajectoryThing", entity_id=tid)
        return frozenset(scope)
    if type_name == "Sensor":
        return frozenset(_own_links(graph, doc, entity_id, "Projects", "sensor_project", 0))
    if type_name == "Datastream":
        thing_id = doc.get("Thing") if doc else None
        kind, _ = resolve_thing(graph, thing_id)
        return scope_of(graph, kind, entity_id=thing_id) if kind else frozenset()
    if type_name == "Observation":
        ds_id = doc.get("Datastream") if doc else None
        return scope_of(graph, "Datastream", entity_id=ds_id) if ds_id else frozenset()
    if type_name == "BhSampling":
        traj_id = doc.get("BhTrajectoryThing") if doc else None
        return scope_of(graph, "BhTrajectoryThing", entity_id=traj_id) if traj_id else frozenset()
    if type_name == "BhFeatureOfInterest":
        sampling_id = doc.get("BhSampling") if doc else None
        return scope_of(graph, "BhSampling", entity_id=sampling_id) if sampling_id else frozenset()
    if type_name == "BhPreparationStep":
        foi_id = doc.get("BhFeatureOfInterest") if doc else None
        return scope_of(graph, "BhFeatureOfInterest", entity_id=foi_id) if foi_id else frozenset()
    if type_name in ("BhSampler", "BhSamplingProcedure"):
        scope = set()
        if entity_id is not None:
            for sid, sampling in graph.all("BhSampling").items():
                if sampling.get(type_name) == entity_id:
                    scope |= scope_of(graph, "BhSampling", entity_id=sid)
        return frozenset(scope)
    if type_name == "BhPreparationProcedure":
        scope = set()
        if entity_id is not None:
            for sid, step in graph.all("BhPreparationStep").items():
                if step.get("BhPreparationProcedure") == entity_id:
                    scope |= scope_of(graph, "BhPreparationStep", entity_id=sid)
        return frozenset(scope)
    if type_name == "UserProjectRole":
        project_id = doc.get("Project") if doc else None
        return frozenset() if project_id is None else frozenset({project_id})
    # ObservedProperty, BhFeatureType, Role, User: global scope
    return frozenset()


def entity_scope(type_name: str, entity_id, doc, graph) -> frozenset:
    return scope_of(graph, type_name, entity_id=entity_id, doc=doc)


def document_scope(type_name: str, doc, graph) -> frozenset:
    return scope_of(graph, type_name, entity_id=doc.get("id"), doc=doc)


# -- decisions ----------------------------------------------------------------


def _row_of(type_name: str) -> str:
    row = _ROW_OF_TYPE.get(type_name)
    if row is None:
        raise KeyError(f"no rights row for entity type {type_name!r}")
    return row


def _grants_union(principal: Principal, scope) -> set:
    """Effective project rights over a scope.

    An entity outside every project (an unreferenced sampler, say) is judged
    against the union of all grants: invisible to outsiders, workable for
    anyone who holds the right somewhere.  Project admin implies full CRUD
    within the project.
    """
    if scope:
        sets = [principal.project_grants.get(pid, frozenset()) for pid in scope]
    else:
        sets = list(principal.project_grants.values())
    union = set()
    for grant in sets:
        union |= grant
    if "admin" in union:
        union |= {"create", "read", "update", "delete"}
    return union


def _is_public(graph, scope) -> bool:
    for pid in scope:
        project = graph.get("Project", pid)
        if project is not None and project.get("public") is True:
            return True
    return False


def _manager_anywhere(principal: Principal) -> bool:
    return any("admin" in grant for grant in principal.project_grants.values())


def _holds_role(graph, principal: Principal, role_id) -> bool:
    if principal.user_id is None or role_id is None:
        return False
    if role_id in graph.link_targets("user_role", 0, principal.user_id):
        return True
    return any(
        upr.get("User") == principal.user_id and upr.get("Role") == role_id
        for upr in graph.all("UserProjectRole").values()
    )


def authorize(
    principal: Principal,
    action: str,
    type_name: str,
    scope,
    graph,
    *,
    entity_id=None,
    entity=None,
) -> Decision:
    """Decide one (principal, action, entity) cell of the rights matrix."""
    if action not in ACTIONS:
        raise ValueError(f"unknown action {action!r}")
    row = _row_of(type_name)

    if action == "admin":
        if principal.is_admin:
            return _allow("global-admin")
        if scope and "admin" in _grants_union(principal, scope):
            return _allow("project-admin")
        return _deny("admin-required")

    if principal.is_admin:
        return _allow("global-admin")

    grants = _grants_union(principal, scope)

    if row == "obsprop":
        if action == "read":
            return _allow("shared-vocabulary")
        if action in principal.global_roles:
            return _allow("global-role")
        return _deny("global-role-required")

    if row == "project":
        if action == "read":
            if "read" in principal.global_roles:
                return _allow("global-role")
            if _is_public(graph, scope):
                return _allow("public-project")
            if grants and scope:
                return _allow("project-grant")
            return _deny("no-read-right")
        return _deny("admin-required")

    if row == "user":
        if action == "read":
            if _manager_anywhere(principal):
                return _allow("project-admin")
            if entity_id is not None and entity_id == principal.user_id:
                return _allow("self")
            return _deny("self-only")
        if action == "update":
            if entity_id is not None and entity_id == principal.user_id:
                return _allow("self")
            return _deny("admin-required")
        return _deny("admin-required")

    if row == "role":
        if action == "read":
            if _manager_anywhere(principal):
                return _allow("project-admin")
            if _holds_role(graph, principal, entity_id):
                return _allow("self")
            return _deny("self-only")
        return _deny("admin-required")

    if row == "upr":
        if "admin" in grants and scope:
            return _allow("project-admin")
        if action == "read":
            owner = entity.get("User") if entity else None
            if owner is not None and owner == principal.user_id:
                return _allow("self")
            return _deny("self-only")
        return _deny("project-admin-required")

    # data rows: sensor, thing, sampling, datastream, observation
    if action == "read":
        if "read" in principal.global_roles:
            return _allow("global-role")
        if _is_public(graph, scope):
            return _allow("public-project")
        if "read" in grants:
            return _allow("project-grant")
        return _deny("no-read-right")

    if action in principal.global_roles:
        return _allow("global-role")
    if "admin" in grants:
        return _allow("project-admin")
    if row in ("sampling", "datastream", "observation") and action in grants:
        return _allow("project-grant")
    return _deny("no-write-right")


def require(principal, action, type_name, scope, graph, *, entity_id=None, entity=None):
    decision = authorize(
        principal, action, type_name, scope, graph, entity_id=entity_id, entity=entity
    )
    if decision.allow:
        return
    if principal.anonymous:
        raise Unauthorized(f"{action} {type_name}: authentication required")
    raise Forbidden(f"{action} {type_name}: {decision.reason}")


def can_read(principal, type_name, entity_id, doc, graph) -> bool:
    scope = entity_scope(type_name, entity_id, doc, graph)
    return authorize(
        principal, "read", type_name, scope, graph, entity_id=entity_id, entity=doc
    ).allow
