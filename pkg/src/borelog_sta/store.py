"""Persistent entity store: append-only journal, snapshots, batch ingestion.

Mutations are serialized through a single writer lock and produce a fresh
graph object (copy-on-write per entity set), so readers always work on an
immutable snapshot and a failed batch leaves the published graph untouched.
The journal holds one JSON mutation record per line; replaying it from an
empty graph reproduces the current state exactly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone

from . import security
from .model import (
    ENTITY_TYPES,
    LINK_IDS,
    EntityType,
    LocalRef,
    ValidationFailed,
    lookup_type,
    parse_wire_document,
    resolve_thing,
    validate_entity,
)

logger = logging.getLogger(__name__)

SNAPSHOT_VERSION = 1

_THING_TYPES = ("BhCollarThing", "BhTrajectoryThing")


def _counter_key(type_name: str) -> str:
    return "Thing" if type_name in _THING_TYPES else type_name


def _occupied(graph: "EntityGraph", type_name: str, entity_id: int) -> bool:
    if type_name in _THING_TYPES:
        return any(graph.get(t, entity_id) is not None for t in _THING_TYPES)
    return graph.get(type_name, entity_id) is not None


class StoreError(Exception):
    pass


class NotFound(StoreError):
    pass


class Conflict(StoreError):
    pass


class DependencyMissing(StoreError):
    pass


class BatchError(StoreError):
    def __init__(self, index: int, cause: Exception):
        self.index = index
        self.cause = cause
        super().__init__(f"batch item {index}: {cause}")


class CorruptSnapshot(StoreError):
    pass


@dataclass
class EntityGraph:
    """Immutable-by-convention view of all entities, links and id counters."""

    entities: dict = field(default_factory=dict)
    links: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)

    @classmethod
    def empty(cls) -> "EntityGraph":
        # collars and trajectories are both Things and share one id space
        counters = {name: 0 for name in ENTITY_TYPES if name not in _THING_TYPES}
        counters["Thing"] = 0
        return cls(
            entities={name: {} for name in ENTITY_TYPES},
            links={link_id: set() for link_id in LINK_IDS},
            counters=counters,
        )

    def copy(self) -> "EntityGraph":
        return EntityGraph(
            entities={name: dict(docs) for name, docs in self.entities.items()},
            links={link_id: set(pairs) for link_id, pairs in self.links.items()},
            counters=dict(self.counters),
        )

    def get(self, type_name: str, entity_id) -> dict | None:
        if not isinstance(entity_id, int):
            return None
        return self.entities.get(type_name, {}).get(entity_id)

    def all(self, type_name: str) -> dict:
        return self.entities.get(type_name, {})

    def link_targets(self, link_id: str, side: int, entity_id: int) -> list[int]:
        pairs = self.links.get(link_id, ())
        if side == 0:
            return sorted(b for a, b in pairs if a == entity_id)
        return sorted(a for a, b in pairs if b == entity_id)

    def equal_to(self, other: "EntityGraph") -> bool:
        return (
            self.entities == other.entities
            and self.links == other.links
            and self.counters == other.counters
        )


def _canonical(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


class Store:
    """Single-writer multi-reader store over an EntityGraph."""

    def __init__(self, journal_path: str | None = None):
        self._lock = threading.Lock()
        self.graph = EntityGraph.empty()
        self.journal_path = journal_path
        self._journal_file = None
        if journal_path:
            if os.path.exists(journal_path):
                self._replay(journal_path)
            self._journal_file = open(journal_path, "a", encoding="utf-8")

    # -- journal ------------------------------------------------------------

    def _replay(self, path: str):
        graph = EntityGraph.empty()
        with open(path, encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise StoreError(f"journal line {line_no}: {exc}") from exc
                for mutation in record["items"] if record.get("op") == "batch" else [record]:
                    _apply_mutation(graph, mutation)
        self.graph = graph
        logger.info("journal replayed: %s", path)

    def _journal(self, record: dict):
        if self._journal_file is None:
            return
        self._journal_file.write(_canonical(record) + "\n")
        self._journal_file.flush()

    def close(self):
        if self._journal_file is not None:
            self._journal_file.close()
            self._journal_file = None

    # -- bootstrap ----------------------------------------------------------

    def bootstrap(self, admin_user: str, admin_password: str, *, demo_reader: bool = True):
        """First-start provisioning: the five roles, an admin, a read-only demo user."""
        if self.graph.all("Role") or self.graph.all("User"):
            return
        from .model import ROLE_NAMES

        items = [("Roles", {"name": name}, f"role_{name}") for name in ROLE_NAMES]
        items.append((
            "Users",
            {"username": admin_user, "password": admin_password,
             "Roles": [{"@iot.localKey": "role_admin"}]},
            "user_admin",
        ))
        if demo_reader:
            items.append((
                "Users",
                {"username": "read", "password": "read",
                 "Roles": [{"@iot.localKey": "role_read"}]},
                "user_read",
            ))
        self.batch_create(items, principal=None)

    # -- mutations ----------------------------------------------------------

    def create(self, type_name: str, body: dict, principal=None) -> tuple[int, dict]:
        with self._lock:
            graph = self.graph.copy()
            entity_id, mutation = self._create_on(graph, type_name, body, principal)
            self.graph = graph
            self._journal(mutation)
            return entity_id, graph.get(lookup_type(type_name).name, entity_id)

    def _create_on(self, graph, type_name, body, principal, local_ids=None):
        entity_type = _entity_type(type_name)
        doc = parse_wire_document(entity_type, dict(body))
        if local_ids:
            doc = _resolve_local_refs(entity_type, doc, local_ids)
        _check_dependencies(entity_type, doc, graph)
        if principal is not None:
            scope = security.document_scope(entity_type.name, doc, graph)
            security.require(principal, "create", entity_type.name, scope, graph)
        if entity_type.name == "User":
            password = doc.pop("password", None)
            if not isinstance(password, str) or not password:
                raise ValidationFailed(["password required for a new user"])
            salt = security.new_salt()
            doc["passwordSalt"] = salt
            doc["passwordHash"] = security.hash_password(password, salt)
        if entity_type.name == "Observation" and doc.get("phenomenonTime") is None:
            # The default is journalled, so replay reproduces the same instant.
            doc["phenomenonTime"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
            parameters = dict(doc.get("parameters") or {})
            parameters["phenomenonTimeDefaulted"] = True
            doc["parameters"] = parameters
        entity_id = doc.pop("id", None)
        if entity_id is not None:
            if _occupied(graph, entity_type.name, entity_id):
                raise Conflict(f"{entity_type.name}({entity_id}) already exists")
        else:
            entity_id = graph.counters[_counter_key(entity_type.name)] + 1
            while _occupied(graph, entity_type.name, entity_id):
                entity_id += 1
        violations = validate_entity(entity_type, doc, graph, entity_id=entity_id)
        if violations:
            raise ValidationFailed(violations)
        mutation = {"op": "create", "type": entity_type.name, "id": entity_id, "doc": doc}
        _apply_mutation(graph, mutation)
        return entity_id, mutation

    def read(self, type_name: str, entity_id: int, principal=None) -> dict:
        entity_type = _entity_type(type_name)
        graph = self.graph
        doc = graph.get(entity_type.name, entity_id)
        if doc is None:
            raise NotFound(f"{entity_type.set_name}({entity_id})")
        if principal is not None and not security.can_read(
            principal, entity_type.name, entity_id, doc, graph
        ):
            # render as absent: unauthorized readers cannot probe for existence
            raise NotFound(f"{entity_type.set_name}({entity_id})")
        return doc

    def update(self, type_name: str, entity_id: int, patch_body: dict, principal=None) -> dict:
        entity_type = _entity_type(type_name)
        with self._lock:
            graph = self.graph.copy()
            current = graph.get(entity_type.name, entity_id)
            if current is None:
                raise NotFound(f"{entity_type.set_name}({entity_id})")
            if principal is not None:
                scope = security.entity_scope(entity_type.name, entity_id, current, graph)
                security.require(
                    principal, "update", entity_type.name, scope, graph,
                    entity_id=entity_id, entity=current,
                )
            patch = parse_wire_document(entity_type, dict(patch_body))
            if "id" in patch and patch["id"] != entity_id:
                raise ValidationFailed(["@iot.id cannot be changed"])
            patch.pop("id", None)
            if entity_type.name == "User" and "password" in patch:
                password = patch.pop("password")
                if not isinstance(password, str) or not password:
                    raise ValidationFailed(["password must be a non-empty string"])
                salt = security.new_salt()
                patch["passwordSalt"] = salt
                patch["passwordHash"] = security.hash_password(password, salt)
            merged = {**current, **patch}
            _check_dependencies(entity_type, patch, graph)
            violations = validate_entity(entity_type, merged, graph, entity_id=entity_id)
            if violations:
                raise ValidationFailed(violations)
            mutation = {"op": "update", "type": entity_type.name, "id": entity_id, "patch": patch}
            _apply_mutation(graph, mutation)
            self.graph = graph
            self._journal(mutation)
            return graph.get(entity_type.name, entity_id)

    def delete(self, type_name: str, entity_id: int, principal=None):
        entity_type = _entity_type(type_name)
        with self._lock:
            graph = self.graph.copy()
            current = graph.get(entity_type.name, entity_id)
            if current is None:
                raise NotFound(f"{entity_type.set_name}({entity_id})")
            if principal is not None:
                scope = security.entity_scope(entity_type.name, entity_id, current, graph)
                security.require(
                    principal, "delete", entity_type.name, scope, graph,
                    entity_id=entity_id, entity=current,
                )
            dependent = _find_dependent(graph, entity_type.name, entity_id)
            if dependent is not None:
                raise Conflict(
                    f"{entity_type.set_name}({entity_id}) still referenced by {dependent}"
                )
            mutation = {"op": "delete", "type": entity_type.name, "id": entity_id}
            _apply_mutation(graph, mutation)
            self.graph = graph
            self._journal(mutation)

    def batch_create(self, items, principal=None) -> dict:
        """Apply an ordered list of (type, body, localKey) atomically.

        Bodies may reference earlier items with {"@iot.localKey": key}.
        On any failure nothing is persisted and BatchError carries the index.
        """
        with self._lock:
            graph = self.graph.copy()
            local_ids: dict[str, tuple[str, int]] = {}
            assigned: dict[str, int] = {}
            mutations = []
            for index, item in enumerate(items):
                type_name, body, local_key = _batch_item(item)
                try:
                    entity_id, mutation = self._create_on(
                        graph, type_name, body, principal, local_ids=local_ids
                    )
                except Exception as exc:
                    raise BatchError(index, exc) from exc
                mutations.append(mutation)
                key = local_key if local_key is not None else f"#{index}"
                local_ids[key] = (mutation["type"], entity_id)
                assigned[key] = entity_id
            self.graph = graph
            if mutations:
                self._journal({"op": "batch", "items": mutations})
            return assigned

    # -- snapshot -----------------------------------------------------------

    def snapshot(self, path: str):
        graph = self.graph
        payload = {
            "version": SNAPSHOT_VERSION,
            "counters": graph.counters,
            "entities": {
                name: {str(eid): doc for eid, doc in sorted(docs.items())}
                for name, docs in graph.entities.items()
            },
            "links": {
                link_id: sorted(list(pair) for pair in pairs)
                for link_id, pairs in graph.links.items()
            },
        }
        body = _canonical(payload)
        checksum = hashlib.sha256(body.encode()).hexdigest()
        with open(path, "w", encoding="utf-8") as handle:
            json.dump({"checksum": checksum, "payload": payload}, handle)

    @staticmethod
    def restore(path: str) -> EntityGraph:
        with open(path, encoding="utf-8") as handle:
            try:
                wrapper = json.load(handle)
            except json.JSONDecodeError as exc:
                raise CorruptSnapshot(str(exc)) from exc
        payload = wrapper.get("payload")
        if payload is None or wrapper.get("checksum") != hashlib.sha256(
            _canonical(payload).encode()
        ).hexdigest():
            raise CorruptSnapshot("checksum mismatch")
        if payload.get("version") != SNAPSHOT_VERSION:
            raise CorruptSnapshot(f"unsupported snapshot version {payload.get('version')}")
        graph = EntityGraph.empty()
        for name, docs in payload["entities"].items():
            graph.entities[name] = {int(eid): doc for eid, doc in docs.items()}
        for link_id, pairs in payload["links"].items():
            graph.links[link_id] = {tuple(pair) for pair in pairs}
        graph.counters.update(payload["counters"])
        return graph


def _entity_type(type_name: str) -> EntityType:
    entity_type = lookup_type(type_name)
    if entity_type is None:
        raise NotFound(f"unknown entity type {type_name!r}")
    return entity_type


def _batch_item(item):
    if isinstance(item, dict):
        return item.get("type"), item.get("entity", {}), item.get("localKey")
    type_name, body, local_key = item
    return type_name, body, local_key


def _resolve_local_refs(entity_type, doc, local_ids):
    resolved = dict(doc)
    for rel in entity_type.relations:
        if rel.kind not in ("owned", "link") or rel.name not in resolved:
            continue
        value = resolved[rel.name]

        def lookup(ref):
            if not isinstance(ref, LocalRef):
                return ref
            if ref.key not in local_ids:
                raise DependencyMissing(f"{rel.name}: no earlier batch item with key {ref.key!r}")
            ref_type, ref_id = local_ids[ref.key]
            thing_like = rel.target == "Thing" and ref_type in ("BhCollarThing", "BhTrajectoryThing")
            if ref_type != rel.target and not thing_like:
                raise DependencyMissing(
                    f"{rel.name}: key {ref.key!r} names a {ref_type}, expected {rel.target}"
                )
            return ref_id

        resolved[rel.name] = [lookup(v) for v in value] if isinstance(value, list) else lookup(value)
    return resolved


def _check_dependencies(entity_type, doc, graph):
    """Missing referenced entities signal a creation-order violation."""
    for rel in entity_type.relations:
        if rel.kind not in ("owned", "link") or rel.name not in doc:
            continue
        refs = doc[rel.name]
        refs = refs if isinstance(refs, list) else [refs]
        for ref in refs:
            if isinstance(ref, LocalRef):
                raise DependencyMissing(f"{rel.name}: unresolved local key {ref.key!r}")
            if rel.target == "Thing":
                kind, _ = resolve_thing(graph, ref)
                if kind is None:
                    raise DependencyMissing(
                        f"Thing({ref}) does not resolve to exactly one collar or trajectory"
                    )
            elif graph.get(rel.target, ref) is None:
                raise DependencyMissing(f"{rel.name}: {rel.target}({ref}) does not exist")
    for rel in entity_type.relations:
        if rel.kind == "owned" and rel.required and doc.get(rel.name) is None:
            raise DependencyMissing(f"{rel.name} reference required at creation")


def _apply_mutation(graph: EntityGraph, mutation: dict):
    entity_type = ENTITY_TYPES[mutation["type"]]
    entity_id = mutation["id"]
    op = mutation["op"]
    if op == "create":
        doc = dict(mutation["doc"])
        stored = {}
        for key, value in doc.items():
            rel = entity_type.relation(key) if key not in entity_type.fields else None
            if rel is not None and rel.kind == "link":
                side_pairs = graph.links[rel.link_id]
                for other in value:
                    pair = (entity_id, other) if rel.link_side == 0 else (other, entity_id)
                    side_pairs.add(pair)
            else:
                stored[key] = value
        graph.entities[entity_type.name][entity_id] = stored
        counter_key = _counter_key(entity_type.name)
        if entity_id > graph.counters[counter_key]:
            graph.counters[counter_key] = entity_id
    elif op == "update":
        current = dict(graph.entities[entity_type.name][entity_id])
        for key, value in mutation["patch"].items():
            rel = entity_type.relation(key) if key not in entity_type.fields else None
            if rel is not None and rel.kind == "link":
                pairs = graph.links[rel.link_id]
                if rel.link_side == 0:
                    pairs.difference_update({p for p in pairs if p[0] == entity_id})
                    pairs.update((entity_id, other) for other in value)
                else:
                    pairs.difference_update({p for p in pairs if p[1] == entity_id})
                    pairs.update((other, entity_id) for other in value)
            else:
                current[key] = value
        graph.entities[entity_type.name][entity_id] = current
    elif op == "delete":
        del graph.entities[entity_type.name][entity_id]
        for rel in entity_type.relations:
            if rel.kind != "link":
                continue
            pairs = graph.links[rel.link_id]
            pairs.difference_update({p for p in pairs if p[rel.link_side] == entity_id})
    else:
        raise StoreError(f"unknown mutation op {op!r}")


def _find_dependent(graph: EntityGraph, type_name: str, entity_id: int) -> str | None:
    """First entity still referencing (type_name, entity_id), restrict-delete."""
    for other_type in ENTITY_TYPES.values():
        for rel in other_type.relations:
            if rel.kind != "owned":
                continue
            targets_it = rel.target == type_name or (
                rel.target == "Thing" and type_name in ("BhCollarThing", "BhTrajectoryThing")
            )
            if not targets_it:
                continue
            for other_id, doc in graph.all(other_type.name).items():
                value = doc.get(rel.name)
                refs = value if isinstance(value, list) else [value]
                if entity_id in refs:
                    if other_type.name == type_name and other_id == entity_id:
                        continue
                    return f"{other_type.set_name}({other_id})"
    entity_type = ENTITY_TYPES[type_name]
    for rel in entity_type.relations:
        if rel.kind != "link":
            continue
        others = graph.link_targets(rel.link_id, rel.link_side, entity_id)
        if others:
            return f"{rel.target}({others[0]}) link"
    return None
