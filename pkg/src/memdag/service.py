"""HTTP API over one MemoryStore."""

from __future__ import annotations

import logging
from typing import Any

from fastapi import Body, Depends, FastAPI, Header, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from . import __version__
from .errors import (
    DuplicateNodeError,
    MemDagError,
    ProviderError,
    StorageError,
    UnknownNodeError,
    ValidationError,
)
from .pipeline import DialogueTurn
from .storage import node_to_dict, record_kind
from .store import MemoryStore

logger = logging.getLogger(__name__)

_STATUS: list[tuple[type[Exception], int, str]] = [
    (UnknownNodeError, 404, "unknown_node"),
    (DuplicateNodeError, 409, "duplicate"),
    (ValidationError, 400, "validation_error"),
    (ProviderError, 503, "provider_unavailable"),
    (StorageError, 500, "storage_error"),
]


def error_body(code: str, message: str, detail: Any = None) -> dict[str, Any]:
    return {"code": code, "message": message, "detail": detail}


def _classify(exc: Exception) -> tuple[int, str, Any]:
    for cls, status, code in _STATUS:
        if isinstance(exc, cls):
            detail = getattr(exc, "violations", None) or None
            if isinstance(exc, UnknownNodeError):
                detail = {"id": exc.node_id}
            return status, code, detail
    return 500, "internal_error", None


def _message(exc: Exception) -> str:
    if isinstance(exc, UnknownNodeError):
        return f"unknown node {exc.node_id}"
    return str(exc)


def create_app(store: MemoryStore, token: str | None = None) -> FastAPI:
    app = FastAPI(title="memdag", version=__version__)
    app.state.store = store

    @app.exception_handler(MemDagError)
    async def _memdag_error(request: Request, exc: MemDagError) -> JSONResponse:
        status, code, detail = _classify(exc)
        if status >= 500 and status != 503:
            logger.exception("request failed", exc_info=exc)
        return JSONResponse(error_body(code, _message(exc), detail), status_code=status)

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError) -> JSONResponse:
        detail = [{"loc": list(e.get("loc", ())), "msg": e.get("msg")} for e in exc.errors()]
        return JSONResponse(error_body("validation_error", "malformed request", detail), status_code=400)

    def auth(authorization: str | None = Header(default=None)) -> None:
        if token is not None and authorization != f"Bearer {token}":
            raise _Unauthorized()

    @app.exception_handler(_Unauthorized)
    async def _unauthorized(request: Request, exc: _Unauthorized) -> JSONResponse:
        return JSONResponse(error_body("unauthorized", "missing or wrong bearer token"), status_code=401)

    @app.exception_handler(Exception)
    async def _other(request: Request, exc: Exception) -> JSONResponse:
        logger.exception("unhandled error", exc_info=exc)
        return JSONResponse(error_body("internal_error", "internal error"), status_code=500)

    guard = [Depends(auth)]

    @app.post("/v1/turns", dependencies=guard)
    def post_turn(body: dict = Body(...)) -> dict[str, Any]:
        return store.add_turn(DialogueTurn.from_dict(body)).to_dict()

    @app.post("/v1/batch", dependencies=guard)
    def post_batch(body: dict = Body(...)) -> dict[str, Any]:
        raw = body.get("turns")
        if not isinstance(raw, list):
            raise ValidationError("body must hold a 'turns' list")
        return store.add_batch([DialogueTurn.from_dict(t) for t in raw]).to_dict()

    @app.get("/v1/retrieve", dependencies=guard)
    def get_retrieve(q: str, k: int | None = None, depth: int | None = None) -> dict[str, Any]:
        if not q.strip():
            raise ValidationError("q must be nonempty")
        if k is not None and k < 1:
            raise ValidationError("k must be >= 1")
        if depth is not None and depth < -1:
            raise ValidationError("depth must be >= -1")
        return store.retrieve(q, k=k, depth=depth).to_dict()

    @app.post("/v1/agent/query", dependencies=guard)
    def post_agent(body: dict = Body(...)) -> dict[str, Any]:
        query = body.get("query")
        if not isinstance(query, str) or not query.strip():
            raise ValidationError("body must hold a nonempty 'query'")
        iters = body.get("max_iterations")
        if iters is not None and (not isinstance(iters, int) or iters < 1):
            raise ValidationError("max_iterations must be a positive integer")
        return store.agent_query(query, iters).to_dict()

    @app.get("/v1/nodes/{node_id}", dependencies=guard)
    def get_node(node_id: str, threads: int = 0) -> dict[str, Any]:
        g = store.graph
        with g.lock:
            node = g.node(node_id)
            out = node_to_dict(node, embedding=False)
            if not node.is_root:
                out["kind"] = record_kind(node)
            out["parents"] = list(g.parents[node_id])
            out["children"] = list(g.children[node_id])
            if threads:
                tp = g.thread_of(node_id)
                out["threads"] = {"paths": tp.paths, "truncated": tp.truncated}
        return out

    @app.delete("/v1/nodes/{node_id}", dependencies=guard)
    def delete_node(node_id: str) -> dict[str, Any]:
        return store.delete(node_id).to_dict()

    @app.post("/v1/admin/rebuild", dependencies=guard)
    def rebuild() -> dict[str, Any]:
        return store.rebuild()

    @app.post("/v1/admin/snapshot", dependencies=guard)
    def snapshot() -> dict[str, Any]:
        store.snapshot()
        return {"ok": True}

    @app.get("/v1/admin/check", dependencies=guard)
    def check() -> dict[str, Any]:
        return {"violations": store.check()}

    @app.get("/v1/stats", dependencies=guard)
    def stats() -> dict[str, Any]:
        return store.stats()

    return app


class _Unauthorized(Exception):
    pass
