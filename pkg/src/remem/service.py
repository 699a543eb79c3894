"""HTTP facade over the engine: session lifecycle, memory search, metrics.

Endpoints are thin adapters; every response is reproducible by the same
library call on an identically seeded engine. One turn at a time per
owner (409 otherwise); mutating endpoints honour an Idempotency-Key
header by replaying the cached response.
"""

from __future__ import annotations

import threading

from fastapi import FastAPI, Header, HTTPException, Query, Request
from fastapi.responses import JSONResponse

from .agent import AgentEngine
from .config import RuntimeConfig
from .errors import (AlreadyClosed, EmbedderMismatch, NoOpenSession,
                     RememError, SessionStillOpen, StoreCorruption,
                     UnknownEntryId)
from .embedding import embed


class EngineHub:
    """Per-owner engines created on demand from one runtime config."""

    def __init__(self, config: RuntimeConfig):
        self.config = config
        self._engines: dict[str, AgentEngine] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()
        self._shared_reranker = None

    def engine(self, owner: str) -> AgentEngine:
        with self._guard:
            if owner not in self._engines:
                engine = self.config.make_engine(owner)
                if self.config.shared_params:
                    if self._shared_reranker is None:
                        self._shared_reranker = engine.reranker
                    engine.reranker = self._shared_reranker
                self._engines[owner] = engine
                self._locks[owner] = threading.Lock()
            return self._engines[owner]

    def turn_lock(self, owner: str) -> threading.Lock:
        self.engine(owner)
        return self._locks[owner]

    def owners(self) -> list[str]:
        with self._guard:
            return list(self._engines)


def make_app(config: RuntimeConfig | None = None,
             hub: EngineHub | None = None) -> FastAPI:
    config = config or RuntimeConfig()
    hub = hub or EngineHub(config)
    app = FastAPI(title="remem", docs_url=None, redoc_url=None)
    app.state.hub = hub
    app.state.idempotency_cache: dict[tuple, dict] = {}

    def cached(key: str | None, scope: str):
        if key is None:
            return None
        return app.state.idempotency_cache.get((scope, key))

    def remember(key: str | None, scope: str, payload: dict) -> dict:
        if key is not None:
            app.state.idempotency_cache[(scope, key)] = payload
        return payload

    @app.middleware("http")
    async def echo_seed(request: Request, call_next):
        response = await call_next(request)
        response.headers["X-Seed"] = str(config.seed)
        return response

    @app.exception_handler(RememError)
    async def domain_error(request: Request, exc: RememError):
        status = 409 if isinstance(
            exc, (AlreadyClosed, NoOpenSession, SessionStillOpen)) else 400
        if isinstance(exc, (StoreCorruption, EmbedderMismatch)):
            status = 500
        return JSONResponse(status_code=status,
                            content={"error": type(exc).__name__,
                                     "detail": str(exc)})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/v1/sessions", status_code=201)
    def create_session(body: dict | None = None,
                       idempotency_key: str | None = Header(default=None)):
        body = body or {}
        owner = body.get("owner", config.owner)
        hit = cached(idempotency_key, f"create:{owner}")
        if hit is not None:
            return hit
        engine = hub.engine(owner)
        session_id = engine.start_session(body.get("session_id"))
        return remember(idempotency_key, f"create:{owner}",
                        {"session_id": session_id, "owner": owner})

    @app.post("/v1/sessions/{session_id}/messages")
    def post_message(session_id: str, body: dict,
                     idempotency_key: str | None = Header(default=None)):
        owner = body.get("owner", config.owner)
        text = body.get("text", "")
        if not text.strip():
            raise HTTPException(status_code=422, detail="text required")
        hit = cached(idempotency_key, f"msg:{owner}")
        if hit is not None:
            return hit
        engine = hub.engine(owner)
        if engine.session is None or engine.session.closed \
                or engine.session.session_id != session_id:
            raise HTTPException(status_code=404,
                                detail=f"no open session {session_id}")
        lock = hub.turn_lock(owner)
        if not lock.acquire(blocking=False):
            raise HTTPException(
                status_code=409,
                detail="a turn is already in flight for this owner")
        try:
            result = engine.run_turn(text)
        finally:
            lock.release()
        return remember(idempotency_key, f"msg:{owner}", result.to_dict())

    @app.delete("/v1/sessions/{session_id}")
    def close_session(session_id: str, owner: str | None = Query(None),
                      idempotency_key: str | None = Header(default=None)):
        owner = owner or config.owner
        hit = cached(idempotency_key, f"close:{owner}")
        if hit is not None:
            return hit
        engine = hub.engine(owner)
        if engine.session is None or engine.session.session_id != session_id:
            raise HTTPException(status_code=404,
                                detail=f"no session {session_id}")
        report = engine.end_session()
        return remember(idempotency_key, f"close:{owner}", report.to_dict())

    @app.get("/v1/memory/search")
    def memory_search(q: str, k: int = 5, owner: str | None = Query(None)):
        engine = hub.engine(owner or config.owner)
        if not q.strip():
            raise HTTPException(status_code=422, detail="q required")
        query = embed(q, engine.embedder)
        results = engine.bank.search_top_k(query, k)
        return {"results": [{"entry_id": r.entry_id, "score": r.score,
                             "rank": r.rank} for r in results]}

    @app.get("/v1/memory/{entry_id}")
    def memory_get(entry_id: str, owner: str | None = Query(None)):
        engine = hub.engine(owner or config.owner)
        try:
            entry = engine.bank.get(entry_id)
        except UnknownEntryId:
            raise HTTPException(status_code=404,
                                detail=f"no entry {entry_id}") from None
        return entry.to_dict()

    @app.get("/v1/metrics")
    def metrics():
        return {"owners": {owner: hub.engine(owner).metrics()
                           for owner in hub.owners()},
                "seed": config.seed}

    return app


def serve(config: RuntimeConfig) -> None:
    """Run the service until interrupted; checkpoints flush on shutdown."""
    import uvicorn

    hub = EngineHub(config)
    try:
        hub.engine(config.owner)  # fail fast on unloadable stores
    except RememError as exc:
        raise StoreCorruption(f"refusing to serve: {exc}") from exc
    app = make_app(config, hub=hub)

    @app.on_event("shutdown")
    def flush():
        for owner in app.state.hub.owners():
            app.state.hub.engine(owner).checkpoint()

    try:
        uvicorn.run(app, host=config.bind_host, port=config.bind_port,
                    log_level=config.log_level.lower())
    except OSError as exc:
        from .errors import BindFailure
        raise BindFailure(
            f"{config.bind_host}:{config.bind_port}: {exc}") from exc
