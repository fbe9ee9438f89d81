"""HTTP face of the store, following the SensorThings URL conventions.

All routes live under /v1.1.  GET requests go through the query engine;
writes map one-to-one onto store operations.  Requests authenticate with
HTTP Basic; requests without credentials run as the anonymous principal,
which can read public projects and nothing else.
"""

from __future__ import annotations

import base64
import binascii

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import security
from .model import ENTITY_SETS, ValidationFailed, lookup_set, serialize_entity, strip_secrets
from .query import QueryError, evaluate, parse_query
from .store import BatchError, Conflict, DependencyMissing, NotFound, Store

ROOT = "/v1.1"


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        self.status = status
        self.message = message
        super().__init__(message)


class BatchItem(BaseModel):
    type: str
    entity: dict
    localKey: str | None = None


class BatchRequest(BaseModel):
    batch: list[BatchItem] = Field(default_factory=list)


class BatchResponse(BaseModel):
    created: dict[str, int]


def _error_status(exc: Exception) -> int:
    if isinstance(exc, (ValidationFailed, QueryError)):
        return 400
    if isinstance(exc, security.Unauthorized):
        return 401
    if isinstance(exc, security.Forbidden):
        return 403
    if isinstance(exc, NotFound):
        return 404
    if isinstance(exc, (Conflict, DependencyMissing)):
        return 409
    raise exc


def _error_response(status: int, message: str) -> JSONResponse:
    headers = {"WWW-Authenticate": "Basic realm=borelog"} if status == 401 else None
    body = {"error": {"code": status, "message": message or "request failed"}}
    return JSONResponse(body, status_code=status, headers=headers)


def _principal(request: Request, store: Store) -> security.Principal:
    header = request.headers.get("authorization")
    if not header:
        return security.ANONYMOUS
    scheme, _, payload = header.partition(" ")
    if scheme.lower() != "basic":
        raise ApiError(401, "unsupported authorization scheme")
    try:
        decoded = base64.b64decode(payload.strip(), validate=True).decode("utf-8")
    except (binascii.Error, UnicodeDecodeError) as exc:
        raise ApiError(401, "malformed credentials") from exc
    username, sep, password = decoded.partition(":")
    if not sep:
        raise ApiError(401, "malformed credentials")
    try:
        return security.authenticate(store.graph, username, password)
    except security.Unauthorized as exc:
        raise ApiError(401, str(exc) or "invalid credentials") from exc


def _base_url(request: Request) -> str:
    return str(request.base_url).rstrip("/") + ROOT


def _entity_set(name: str):
    entity_type = lookup_set(name)
    if entity_type is None:
        raise ApiError(404, f"unknown entity set {name!r}")
    return entity_type


def _addressed(segment: str):
    name, open_paren, rest = segment.partition("(")
    if not open_paren or not rest.endswith(")") or not rest[:-1].isdigit():
        raise ApiError(404, f"expected EntitySet(id), got {segment!r}")
    return _entity_set(name), int(rest[:-1])


def create_app(store: Store) -> FastAPI:
    app = FastAPI(title="borelog-sta", docs_url=None, redoc_url=None)

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return _error_response(exc.status, exc.message)

    @app.exception_handler(Exception)
    async def _domain_error(request: Request, exc: Exception):
        return _error_response(_error_status(exc), str(exc))

    @app.post(ROOT + "/$batch", response_model=BatchResponse)
    def post_batch(request: Request, body: BatchRequest):
        principal = _principal(request, store)
        items = [item.model_dump() for item in body.batch]
        try:
            created = store.batch_create(items, principal=principal)
        except BatchError as exc:
            status = _error_status(exc.cause)
            raise ApiError(status, str(exc)) from exc
        return BatchResponse(created=created)

    @app.get(ROOT)
    @app.get(ROOT + "/")
    def service_document(request: Request):
        base = _base_url(request)
        _principal(request, store)
        return {"value": [
            {"name": name, "url": f"{base}/{name}"} for name in ENTITY_SETS
        ]}

    @app.get(ROOT + "/{path:path}")
    def get_any(request: Request, path: str):
        principal = _principal(request, store)
        raw = path
        if request.url.query:
            raw = f"{path}?{request.url.query}"
        plan = parse_query(raw)
        return evaluate(plan, store.graph, principal, base_url=_base_url(request))

    @app.post(ROOT + "/{entity_set}", status_code=201)
    def post_entity(request: Request, entity_set: str, body: dict):
        principal = _principal(request, store)
        entity_type = _entity_set(entity_set)
        entity_id, doc = store.create(entity_type.name, body, principal=principal)
        base = _base_url(request)
        rendered = strip_secrets(serialize_entity(entity_type, entity_id, doc, store.graph, base))
        return JSONResponse(
            rendered, status_code=201,
            headers={"Location": rendered["@iot.selfLink"]},
        )

    @app.patch(ROOT + "/{segment}")
    def patch_entity(request: Request, segment: str, body: dict):
        principal = _principal(request, store)
        entity_type, entity_id = _addressed(segment)
        doc = store.update(entity_type.name, entity_id, body, principal=principal)
        base = _base_url(request)
        return strip_secrets(serialize_entity(entity_type, entity_id, doc, store.graph, base))

    @app.delete(ROOT + "/{segment}", status_code=204)
    def delete_entity(request: Request, segment: str):
        principal = _principal(request, store)
        entity_type, entity_id = _addressed(segment)
        store.delete(entity_type.name, entity_id, principal=principal)
        return Response(status_code=204)

    return app
