"""Resource-path and query-option engine.

Parses service-relative URLs like

    BhTrajectoryThings(9)?$select=name&$expand=BhSamplings($orderBy=atPosition)

into a QueryPlan and evaluates plans against a graph snapshot.  Property and
keyword matching is case-insensitive.  Comparisons over paths that traverse
a to-many relation are exists-quantified: true iff some reachable value
satisfies the comparison.  Collections page at PAGE_SIZE with @iot.nextLink.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from urllib.parse import quote, unquote, unquote_plus

from . import security
from .model import (
    EntityType,
    lookup_set,
    lookup_type,
    resolve_thing,
    serialize_entity,
    strip_secrets,
)
from .store import NotFound

PAGE_SIZE = 100

_OPTION_KEYS = ("filter", "expand", "select", "orderby", "top", "skip")
_COMPARE_OPS = ("eq", "ne", "gt", "ge", "lt", "le")
_SEGMENT_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)(?:\((\d+)\))?$")
_NEXT_LINK_SAFE = "$()',/@.:*+-"


class QueryError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)


@dataclass(frozen=True)
class PropertyPath:
    parts: tuple


@dataclass(frozen=True)
class Literal:
    value: object


@dataclass(frozen=True)
class Comparison:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class BoolOp:
    op: str
    left: object
    right: object


@dataclass
class QueryOptions:
    filter: object = None
    expand: list = field(default_factory=list)
    select: list | None = None
    order_by: list = field(default_factory=list)
    top: int | None = None
    skip: int | None = None


@dataclass
class ExpandNode:
    name: str
    options: QueryOptions = field(default_factory=QueryOptions)


@dataclass
class QueryPlan:
    path: list  # of (name, id or None)
    options: QueryOptions = field(default_factory=QueryOptions)


# -- parsing ------------------------------------------------------------------


def parse_query(text: str) -> QueryPlan:
    text = text.strip().lstrip("/")
    path_text, _, query_text = text.partition("?")
    if not path_text:
        raise QueryError("empty resource path", 0)
    segments = []
    for raw in path_text.split("/"):
        match = _SEGMENT_RE.match(unquote(raw).strip())
        if not match:
            raise QueryError(f"bad path segment {raw!r}")
        name, entity_id = match.group(1), match.group(2)
        segments.append((name, int(entity_id) if entity_id else None))
    if lookup_set(segments[0][0]) is None:
        raise NotFound(f"unknown entity set {segments[0][0]!r}")
    options = QueryOptions()
    if query_text:
        for pair in query_text.split("&"):
            if not pair.strip():
                continue
            key, eq, value = pair.partition("=")
            if not eq:
                raise QueryError(f"malformed query option {pair!r}")
            # form-encoding clients send %24filter and + for spaces
            _apply_option(options, unquote(key), unquote_plus(value))
    return QueryPlan(segments, options)


def _apply_option(options: QueryOptions, key: str, value: str):
    key = key.strip().lstrip("$").lower()
    if key not in _OPTION_KEYS:
        raise QueryError(f"unknown query option {key!r}")
    value = value.strip()
    if key == "filter":
        options.filter = parse_filter(value)
    elif key == "expand":
        options.expand = _parse_expand_list(value)
    elif key == "select":
        names = [n.strip() for n in value.split(",")]
        if not all(names):
            raise QueryError("$select needs non-empty names")
        options.select = names
    elif key == "orderby":
        options.order_by = _parse_orderby(value)
    else:
        try:
            count = int(value)
        except ValueError:
            raise QueryError(f"${key} must be an integer, got {value!r}") from None
        if count < 0:
            raise QueryError(f"${key} must be non-negative")
        setattr(options, key, count)


def _parse_orderby(value: str) -> list:
    out = []
    for clause in value.split(","):
        words = clause.split()
        if not words:
            raise QueryError("$orderby needs a property path")
        direction = "asc"
        if len(words) == 2 and words[1].lower() in ("asc", "desc"):
            direction = words[1].lower()
        elif len(words) != 1:
            raise QueryError(f"bad $orderby clause {clause.strip()!r}")
        out.append((PropertyPath(tuple(words[0].split("/"))), direction))
    return out


def _parse_expand_list(text: str) -> list:
    items = []
    for chunk in _split_level(text, ","):
        if not chunk.strip():
            raise QueryError("empty $expand item")
        items.append(_parse_expand_item(chunk.strip()))
    return items


def _parse_expand_item(text: str) -> ExpandNode:
    match = re.match(r"^([A-Za-z_][A-Za-z0-9_]*)\s*(\((.*)\))?$", text, re.DOTALL)
    if not match:
        raise QueryError(f"bad $expand item {text!r}")
    node = ExpandNode(match.group(1))
    inner = match.group(3)
    if inner:
        for option in _split_level(inner, ";"):
            if not option.strip():
                continue
            key, eq, value = option.partition("=")
            if not eq:
                raise QueryError(f"malformed expand option {option.strip()!r}")
            _apply_option(node.options, key, value)
    return node


def _split_level(text: str, separator: str) -> list:
    """Split on separator at parenthesis depth zero, ignoring quoted text."""
    parts, depth, start, i = [], 0, 0, 0
    in_string = False
    while i < len(text):
        ch = text[i]
        if in_string:
            if ch == "'":
                if i + 1 < len(text) and text[i + 1] == "'":
                    i += 1
                else:
                    in_string = False
        elif ch == "'":
            in_string = True
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise QueryError("unbalanced parentheses", i)
        elif ch == separator and depth == 0:
            parts.append(text[start:i])
            start = i + 1
        i += 1
    if depth != 0 or in_string:
        raise QueryError("unbalanced parentheses or unterminated string")
    parts.append(text[start:])
    return parts


# filter grammar: or_expr := and_expr ('or' and_expr)* ; and binds tighter


class _FilterParser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def parse(self):
        expr = self._or_expr()
        self._skip_space()
        if self.pos != len(self.text):
            raise QueryError("trailing filter text", self.pos)
        return expr

    def _or_expr(self):
        expr = self._and_expr()
        while self._keyword("or"):
            expr = BoolOp("or", expr, self._and_expr())
        return expr

    def _and_expr(self):
        expr = self._comparison()
        while self._keyword("and"):
            expr = BoolOp("and", expr, self._comparison())
        return expr

    def _comparison(self):
        self._skip_space()
        if self._peek() == "(":
            self.pos += 1
            expr = self._or_expr()
            self._skip_space()
            if self._peek() != ")":
                raise QueryError("expected ')'", self.pos)
            self.pos += 1
            return expr
        left = self._operand()
        self._skip_space()
        for op in _COMPARE_OPS:
            if self._keyword(op):
                return Comparison(op, left, self._operand())
        raise QueryError("expected comparison operator", self.pos)

    def _operand(self):
        self._skip_space()
        ch = self._peek()
        if ch is None:
            raise QueryError("expected operand", self.pos)
        if ch == "'":
            return Literal(self._string())
        if ch.isdigit() or (ch in "+-" and self._peek(1) and self._peek(1).isdigit()):
            return Literal(self._number())
        path = self._path()
        lowered = path.parts[0].lower() if len(path.parts) == 1 else ""
        if lowered in ("true", "false"):
            return Literal(lowered == "true")
        return path

    def _string(self) -> str:
        start = self.pos
        self.pos += 1
        out = []
        while self.pos < len(self.text):
            ch = self.text[self.pos]
            if ch == "'":
                if self.pos + 1 < len(self.text) and self.text[self.pos + 1] == "'":
                    out.append("'")
                    self.pos += 2
                    continue
                self.pos += 1
                return "".join(out)
            out.append(ch)
            self.pos += 1
        raise QueryError("unterminated string literal", start)

    def _number(self):
        match = re.match(r"[+-]?\d+(\.\d+)?([eE][+-]?\d+)?", self.text[self.pos:])
        token = match.group(0)
        self.pos += len(token)
        return float(token) if ("." in token or "e" in token.lower()) else int(token)

    def _path(self) -> PropertyPath:
        match = re.match(r"[A-Za-z_@][A-Za-z0-9_@.]*(/[A-Za-z_@][A-Za-z0-9_@.]*)*", self.text[self.pos:])
        if not match:
            raise QueryError(f"bad filter token {self.text[self.pos:self.pos + 10]!r}", self.pos)
        self.pos += len(match.group(0))
        return PropertyPath(tuple(match.group(0).split("/")))

    def _keyword(self, word: str) -> bool:
        self._skip_space()
        end = self.pos + len(word)
        if self.text[self.pos:end].lower() != word:
            return False
        if end < len(self.text) and (self.text[end].isalnum() or self.text[end] in "_@./"):
            return False
        self.pos = end
        return True

    def _peek(self, ahead: int = 0):
        index = self.pos + ahead
        return self.text[index] if index < len(self.text) else None

    def _skip_space(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1


def parse_filter(text: str):
    if not text.strip():
        raise QueryError("empty filter expression", 0)
    return _FilterParser(text).parse()


# -- navigation ---------------------------------------------------------------


def resolve_navigation(entity_type: EntityType, name: str):
    """(target type name, many) for a relation, case-insensitive."""
    rel = entity_type.relation(name)
    if rel is None:
        raise QueryError(f"{entity_type.name} has no relation {name!r}")
    return rel, rel.many


def related_entities(graph, entity_type: EntityType, entity_id: int, doc: dict, rel) -> list:
    """[(type name, id, doc)] reachable over one relation, id ascending."""

    def typed(target: str, ids) -> list:
        out = []
        for ref in sorted(i for i in ids if i is not None):
            if target == "Thing":
                kind, found = resolve_thing(graph, ref)
                if kind is not None:
                    out.append((kind, ref, found))
            else:
                found = graph.get(target, ref)
                if found is not None:
                    out.append((target, ref, found))
        return out

    if rel.kind == "owned":
        value = doc.get(rel.name)
        refs = value if isinstance(value, list) else [] if value is None else [value]
        return typed(rel.target, refs)
    if rel.kind == "link":
        return typed(rel.target, graph.link_targets(rel.link_id, rel.link_side, entity_id))
    owner_type, owned_name = rel.reverse_of
    ids = []
    for other_id, other in graph.all(owner_type).items():
        value = other.get(owned_name)
        refs = value if isinstance(value, list) else [value]
        if entity_id in refs:
            ids.append(other_id)
    return [(owner_type, oid, graph.all(owner_type)[oid]) for oid in sorted(ids)]


# -- evaluation ---------------------------------------------------------------


def evaluate(plan: QueryPlan, graph, principal, base_url: str = ""):
    """Run a plan against a snapshot; collections come back as {"value": [...]}."""
    current = _resolve_path(plan.path, graph, principal)
    options = plan.options
    if len(current) == 3:  # single entity; collections are (type, entries)
        for name, given in (("filter", options.filter), ("orderby", options.order_by),
                            ("top", options.top), ("skip", options.skip)):
            if given not in (None, []):
                raise QueryError(f"${name} applies to collections")
        type_name, entity_id, doc = current
        return _render(graph, principal, type_name, entity_id, doc, options, base_url)

    type_name, entries = current
    if options.filter is not None:
        entries = [
            e for e in entries
            if _truthy(_eval_expr(options.filter, graph, type_name, e[0], e[1]))
        ]
    entries = _order(entries, options.order_by, graph, type_name)
    if options.skip:
        entries = entries[options.skip:]
    consumed_skip = (options.skip or 0)
    if options.top is not None:
        entries = entries[:options.top]
    page = entries[:PAGE_SIZE]
    result = {
        "value": [
            _render(graph, principal, type_name, eid, doc, options, base_url)
            for eid, doc in page
        ]
    }
    if len(entries) > PAGE_SIZE:
        result["@iot.nextLink"] = _next_link(plan, consumed_skip + PAGE_SIZE, base_url)
    return result


def _resolve_path(path, graph, principal):
    """Walk the resource path; returns (type, id, doc) or (type, [(id, doc)...])."""
    first_name, first_id = path[0]
    entity_type = lookup_set(first_name)
    current_many = None
    if first_id is None:
        current_many = (entity_type.name, sorted(graph.all(entity_type.name).items()))
    else:
        doc = graph.get(entity_type.name, first_id)
        if doc is None or not security.can_read(principal, entity_type.name, first_id, doc, graph):
            raise NotFound(f"{entity_type.set_name}({first_id})")
        current_single = (entity_type.name, first_id, doc)

    for name, wanted_id in path[1:]:
        if current_many is not None:
            raise QueryError(f"cannot navigate {name!r} from a collection")
        type_name, entity_id, doc = current_single
        rel, many = resolve_navigation(_type(type_name), name)
        related = related_entities(graph, _type(type_name), entity_id, doc, rel)
        related = [
            (t, i, d) for t, i, d in related if security.can_read(principal, t, i, d, graph)
        ]
        if wanted_id is not None:
            matches = [(t, i, d) for t, i, d in related if i == wanted_id]
            if not matches:
                raise NotFound(f"{name}({wanted_id})")
            current_single = matches[0]
            current_many = None
        elif many:
            target = related[0][0] if related else (
                rel.target if rel.target != "Thing" else "BhCollarThing"
            )
            current_many = (target, [(i, d) for _, i, d in related])
        else:
            if not related:
                raise NotFound(f"{type_name}({entity_id})/{name}")
            current_single = related[0]
            current_many = None

    if current_many is not None:
        type_name, entries = current_many
        entries = [
            (i, d) for i, d in entries if security.can_read(principal, type_name, i, d, graph)
        ]
        return type_name, entries
    return current_single


def _type(name: str) -> EntityType:
    entity_type = lookup_type(name)
    if entity_type is None:
        raise NotFound(f"unknown entity type {name!r}")
    return entity_type


# property-path values: (values list, quantified flag)


def _path_values(parts, graph, type_name, entity_id, doc):
    frontier = [(type_name, entity_id, doc)]
    quantified = False
    for depth, part in enumerate(parts):
        lowered = part.lower()
        if lowered in ("id", "@iot.id"):
            if depth != len(parts) - 1:
                raise QueryError("@iot.id is a leaf property")
            return [eid for _, eid, _ in frontier], quantified
        next_frontier = []
        scalar_values = []
        for tname, eid, entity_doc in frontier:
            entity_type = _type(tname)
            rel = entity_type.relation(part)
            if rel is not None:
                if rel.many:
                    quantified = True
                next_frontier.extend(related_entities(graph, entity_type, eid, entity_doc, rel))
                continue
            field_name = _match_field(entity_type, part)
            if field_name is None:
                raise QueryError(f"{tname} has no property {part!r}")
            value = entity_doc.get(field_name)
            rest = parts[depth + 1:]
            for key in rest:
                value = _dict_lookup(value, key)
            scalar_values.append(value)
        if scalar_values:
            if next_frontier:
                raise QueryError(f"{part!r} is both a property and a relation")
            return scalar_values, quantified
        frontier = next_frontier
        if not frontier and depth < len(parts) - 1:
            return [], quantified
    # path ended on a relation: compare against related entity ids
    return [eid for _, eid, _ in frontier], quantified


def _match_field(entity_type: EntityType, name: str):
    lowered = name.lower()
    for field_name in entity_type.fields:
        if field_name.lower() == lowered:
            return field_name
    return None


def _dict_lookup(value, key):
    if not isinstance(value, dict):
        return None
    if key in value:
        return value[key]
    lowered = key.lower()
    matches = [v for k, v in value.items() if k.lower() == lowered]
    return matches[0] if len(matches) == 1 else None


def _eval_expr(expr, graph, type_name, entity_id, doc):
    if isinstance(expr, BoolOp):
        left = _truthy(_eval_expr(expr.left, graph, type_name, entity_id, doc))
        if expr.op == "and":
            return left and _truthy(_eval_expr(expr.right, graph, type_name, entity_id, doc))
        return left or _truthy(_eval_expr(expr.right, graph, type_name, entity_id, doc))
    if isinstance(expr, Comparison):
        left_values, left_q = _operand_values(expr.left, graph, type_name, entity_id, doc)
        right_values, right_q = _operand_values(expr.right, graph, type_name, entity_id, doc)
        strict = not (left_q or right_q) and len(left_values) == 1 and len(right_values) == 1
        for a in left_values:
            for b in right_values:
                if _compare(expr.op, a, b, strict):
                    return True
        return False
    raise QueryError(f"cannot evaluate {type(expr).__name__}")


def _operand_values(operand, graph, type_name, entity_id, doc):
    if isinstance(operand, Literal):
        return [operand.value], False
    return _path_values(operand.parts, graph, type_name, entity_id, doc)


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _compare(op: str, a, b, strict: bool) -> bool:
    if op in ("eq", "ne"):
        if isinstance(a, bool) != isinstance(b, bool):
            equal = False
        elif _is_number(a) and _is_number(b):
            equal = a == b
        else:
            equal = type(a) is type(b) and a == b
        return equal if op == "eq" else not equal
    if a is None or b is None:
        return False
    comparable = (_is_number(a) and _is_number(b)) or (
        isinstance(a, str) and isinstance(b, str)
    )
    if not comparable:
        if strict:
            raise QueryError(
                f"cannot order {type(a).__name__} against {type(b).__name__}"
            )
        return False
    if op == "gt":
        return a > b
    if op == "ge":
        return a >= b
    if op == "lt":
        return a < b
    return a <= b


def _truthy(value) -> bool:
    return bool(value)


def _order(entries, order_by, graph, type_name):
    entries = sorted(entries, key=lambda pair: pair[0])
    for path, direction in reversed(order_by):
        def key(pair, path=path):
            values, quantified = _path_values(path.parts, graph, type_name, pair[0], pair[1])
            if quantified or len(values) > 1:
                raise QueryError("$orderby path must be single-valued")
            return _sort_key(values[0] if values else None)

        entries = sorted(entries, key=key, reverse=(direction == "desc"))
    return entries


def _sort_key(value):
    if value is None:
        return (0, 0, "")
    if isinstance(value, bool):
        return (1, 1, value)
    if _is_number(value):
        return (1, 2, value)
    if isinstance(value, str):
        return (2, 0, value)
    return (3, 0, repr(value))


def _render(graph, principal, type_name, entity_id, doc, options: QueryOptions, base_url):
    entity_type = _type(type_name)
    out = strip_secrets(serialize_entity(entity_type, entity_id, doc, graph, base_url))
    expanded_keys = []
    for node in options.expand:
        rel, many = resolve_navigation(entity_type, node.name)
        related = related_entities(graph, entity_type, entity_id, doc, rel)
        related = [
            (t, i, d) for t, i, d in related if security.can_read(principal, t, i, d, graph)
        ]
        inner = node.options
        if inner.filter is not None:
            related = [
                (t, i, d) for t, i, d in related
                if _truthy(_eval_expr(inner.filter, graph, t, i, d))
            ]
        if related:
            target = related[0][0]
            pairs = _order([(i, d) for _, i, d in related], inner.order_by, graph, target)
        else:
            target, pairs = rel.target, []
        if inner.skip:
            pairs = pairs[inner.skip:]
        if inner.top is not None:
            pairs = pairs[:inner.top]
        rendered = [
            _render(graph, principal, target, i, d, inner, base_url) for i, d in pairs
        ]
        if many:
            out[rel.name] = rendered
            expanded_keys.append(rel.name)
        elif rendered:
            out[rel.name] = rendered[0]
            expanded_keys.append(rel.name)
    if options.select is not None:
        keep = set(expanded_keys)
        for name in options.select:
            matched = _match_field(entity_type, name)
            rel = entity_type.relation(name)
            if matched is not None:
                keep.add(matched)
            elif rel is not None:
                keep.add(rel.name)
            elif name.lower() not in ("@iot.id", "id"):
                raise QueryError(f"{type_name} has no property {name!r} to select")
        pruned = {"@iot.id": entity_id}
        suffix = "@iot.navigationLink"
        for key, value in out.items():
            base = key[:-len(suffix)] if key.endswith(suffix) else key
            if base in keep:
                pruned[key] = value
        out = pruned
    return out


def _next_link(plan: QueryPlan, new_skip: int, base_url: str) -> str:
    options = QueryOptions(
        filter=plan.options.filter,
        expand=plan.options.expand,
        select=plan.options.select,
        order_by=plan.options.order_by,
        top=None if plan.options.top is None else max(plan.options.top - PAGE_SIZE, 0),
        skip=new_skip,
    )
    return f"{base_url}/{plan_to_text(QueryPlan(plan.path, options))}"


# -- re-serialization ----------------------------------------------------------


def plan_to_text(plan: QueryPlan) -> str:
    path = "/".join(
        name if eid is None else f"{name}({eid})" for name, eid in plan.path
    )
    query = _options_to_text(plan.options, top_level=True)
    return f"{path}?{query}" if query else path


def _options_to_text(options: QueryOptions, *, top_level: bool) -> str:
    parts = []
    if options.filter is not None:
        parts.append(("$filter", filter_to_text(options.filter)))
    if options.expand:
        parts.append(("$expand", ",".join(_expand_to_text(n) for n in options.expand)))
    if options.select is not None:
        parts.append(("$select", ",".join(options.select)))
    if options.order_by:
        clauses = [
            f"{'/'.join(p.parts)}{'' if d == 'asc' else ' desc'}"
            for p, d in options.order_by
        ]
        parts.append(("$orderby", ",".join(clauses)))
    if options.top is not None:
        parts.append(("$top", str(options.top)))
    if options.skip is not None:
        parts.append(("$skip", str(options.skip)))
    if top_level:
        return "&".join(f"{k}={quote(v, safe=_NEXT_LINK_SAFE)}" for k, v in parts)
    return ";".join(f"{k}={v}" for k, v in parts)


def _expand_to_text(node: ExpandNode) -> str:
    inner = _options_to_text(node.options, top_level=False)
    return f"{node.name}({inner})" if inner else node.name


def filter_to_text(expr) -> str:
    if isinstance(expr, BoolOp):
        left = filter_to_text(expr.left)
        right = filter_to_text(expr.right)
        if isinstance(expr.left, BoolOp) and expr.left.op != expr.op:
            left = f"({left})"
        if isinstance(expr.right, BoolOp):
            right = f"({right})"
        return f"{left} {expr.op} {right}"
    if isinstance(expr, Comparison):
        return f"{_operand_to_text(expr.left)} {expr.op} {_operand_to_text(expr.right)}"
    raise ValueError(f"not a filter node: {expr!r}")


def _operand_to_text(operand) -> str:
    if isinstance(operand, PropertyPath):
        return "/".join(operand.parts)
    value = operand.value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return "'" + value.replace("'", "''") + "'"
    return repr(value)
