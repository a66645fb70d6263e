"""HTTP facade over sessions: create, answer queries, advance rounds,
inspect metrics/architecture/saliency.

Every mutation is durably snapshotted to the data directory before the
response is sent, so a process restart reproduces the last acknowledged
state exactly. Mutations on one session are serialized by a per-session
lock; a concurrent mutation attempt gets 409 rather than interleaving.

Bodies are JSON with stable field names; see docs/api.md for the
endpoint reference. Bind address and persistence root come from the
ALICE_BIND and ALICE_DATA_DIR environment variables (or serve flags).
"""

from __future__ import annotations

import secrets
import threading
from pathlib import Path

from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from . import errors
from .heads import saliency
from .session import (
    PHASE_AWAITING,
    Session,
    SessionConfig,
    load_session,
    save_session,
    start_session,
    submit_explanations,
    train_round,
)

DEFAULT_BIND = "127.0.0.1:7878"

_DATASET_ERRORS = (errors.MalformedManifest, errors.MissingTensor, errors.DimMismatch,
                   errors.NonFiniteValue, errors.InvalidParams)


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, extra: dict | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.extra = extra or {}

    def response(self) -> JSONResponse:
        body = {"error": {"code": self.code, "message": self.message, **self.extra}}
        return JSONResponse(status_code=self.status, content=body)


class SessionStore:
    """In-memory sessions backed by one snapshot file per session."""

    def __init__(self, data_dir: Path, dataset_root: Path | None = None):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.dataset_root = Path(dataset_root) if dataset_root else None
        self._store_lock = threading.Lock()
        self._sessions: dict[str, Session] = {}
        self._locks: dict[str, threading.Lock] = {}
        for path in sorted(self.data_dir.glob("*.json")):
            try:
                self._sessions[path.stem] = load_session(path, self.dataset_root)
                self._locks[path.stem] = threading.Lock()
            except errors.AliceError:
                continue  # foreign or stale file; leave it alone

    def create(self, config: SessionConfig) -> tuple[str, Session]:
        session = start_session(config)
        with self._store_lock:
            session_id = secrets.token_hex(16)
            self._sessions[session_id] = session
            self._locks[session_id] = threading.Lock()
        save_session(session, self.data_dir / f"{session_id}.json")
        return session_id, session

    def get(self, session_id: str) -> Session:
        session = self._sessions.get(session_id)
        if session is None:
            raise ApiError(404, "unknown-session", f"no session {session_id}")
        return session

    def mutate(self, session_id: str, fn):
        """Run fn(session) under the session's writer lock and persist
        before returning its result."""
        session = self.get(session_id)
        lock = self._locks[session_id]
        if not lock.acquire(blocking=False):
            raise ApiError(409, "busy", "another mutation is in progress")
        try:
            result = fn(session)
            save_session(session, self.data_dir / f"{session_id}.json")
            return result
        finally:
            lock.release()


def _ticket_view(ticket) -> dict:
    return {
        "ticket_id": ticket.ticket_id,
        "pair": list(ticket.pair),
        "class_names": list(ticket.class_names),
        "prompt": ticket.prompt,
        "jsd": ticket.jsd,
    }


def _metrics_view(m) -> dict:
    return {
        "round": m.round,
        "fine_accuracy": m.fine_accuracy,
        "coarse_accuracy": m.coarse_accuracy,
        "per_class": list(m.per_class),
        "train_losses": m.train_losses,
    }


def _arch_view(session: Session) -> dict:
    arch = session.arch
    return {
        "num_classes": arch.num_classes,
        "arity": arch.arity,
        "round": arch.round,
        "groups": [
            {"group_id": g.group_id, "members": list(g.members),
             "class_names": [session.manifest.class_name(c) for c in g.members]}
            for g in arch.groups
        ],
        "nodes": [{"kind": n.kind, "ref": n.ref} for n in arch.nodes],
    }


def _session_view(session_id: str, session: Session) -> dict:
    return {
        "session_id": session_id,
        "phase": session.phase,
        "k": session.config.k,
        "b": session.config.b,
        "mode": session.config.mode,
        "seed": session.config.seed,
        "dataset": session.manifest.name,
        "rounds_completed": session.rounds_completed,
        "exhausted": session.exhausted,
        "tickets": [_ticket_view(t) for t in session.pending],
        "metrics": [_metrics_view(m) for m in session.metrics_history],
        "architecture": _arch_view(session),
        "query_log": session.query_log,
        "patches_created": sum(r.patches_created for r in session.grounding_reports),
    }


def create_app(data_dir: str | Path, dataset_root: str | Path | None = None,
               static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="alice", docs_url=None, redoc_url=None)
    store = SessionStore(Path(data_dir), dataset_root)
    app.state.store = store

    @app.exception_handler(ApiError)
    async def handle_api_error(_req: Request, exc: ApiError):
        return exc.response()

    def translate(exc: Exception) -> ApiError:
        if isinstance(exc, errors.ConfigError):
            return ApiError(400, "invalid-config", str(exc))
        if isinstance(exc, _DATASET_ERRORS):
            return ApiError(422, "invalid-dataset", str(exc))
        if isinstance(exc, errors.UnknownTicket):
            return ApiError(404, "unknown-ticket", str(exc))
        if isinstance(exc, errors.WrongPhase):
            return ApiError(409, "wrong-phase", str(exc))
        if isinstance(exc, (errors.UnknownClass, errors.EmptySplit)):
            return ApiError(404, "not-found", str(exc))
        if isinstance(exc, errors.AliceError):
            return ApiError(500, "internal", str(exc))
        raise exc

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        body = await request.json()
        try:
            config = SessionConfig.from_dict(body)
            if store.dataset_root is not None and not Path(config.dataset).is_absolute():
                config.dataset = str(store.dataset_root / config.dataset)
            session_id, session = store.create(config)
        except Exception as exc:  # noqa: BLE001 - translated to ApiError
            raise translate(exc) from exc
        return {
            "session_id": session_id,
            "phase": session.phase,
            "round0": _metrics_view(session.metrics_history[0]),
            "tickets": [_ticket_view(t) for t in session.pending],
        }

    @app.get("/sessions")
    async def list_sessions():
        with store._store_lock:
            ids = sorted(store._sessions)
        return {"sessions": [_session_view(sid, store.get(sid)) for sid in ids]}

    @app.get("/sessions/{session_id}")
    async def get_session(session_id: str):
        return _session_view(session_id, store.get(session_id))

    @app.get("/sessions/{session_id}/queries")
    async def get_queries(session_id: str):
        session = store.get(session_id)
        return {"tickets": [_ticket_view(t) for t in session.pending]}

    @app.get("/sessions/{session_id}/metrics")
    async def get_metrics(session_id: str):
        session = store.get(session_id)
        return {"history": [_metrics_view(m) for m in session.metrics_history]}

    @app.get("/sessions/{session_id}/architecture")
    async def get_architecture(session_id: str):
        return _arch_view(store.get(session_id))

    def _resolve_class(session: Session, raw: str) -> int:
        try:
            return int(raw)
        except ValueError:
            pass
        try:
            return session.manifest.class_by_name(raw).id
        except KeyError:
            raise ApiError(404, "unknown-class", f"no class named {raw!r}") from None

    @app.get("/sessions/{session_id}/saliency")
    async def get_saliency(session_id: str, sample: str,
                           target: str = Query(alias="class")):
        session = store.get(session_id)
        try:
            sample_id = int(sample)
        except ValueError as exc:
            raise ApiError(400, "invalid-query", "sample must be an integer") from exc
        fine = _resolve_class(session, target)
        try:
            record = session.manifest.sample_by_id(sample_id)
        except KeyError as exc:
            raise ApiError(404, "unknown-sample", f"no sample {sample_id}") from exc
        if session.model is None:
            raise ApiError(409, "wrong-phase", "session has no trained model")
        try:
            grid = saliency(session.model, session.arch, session.map_of(sample_id), fine)
        except errors.UnknownClass as exc:
            raise ApiError(404, "unknown-class", str(exc)) from exc
        return {
            "sample_id": sample_id,
            "fine_label": record.fine_label,
            "class": fine,
            "h": grid.shape[0],
            "w": grid.shape[1],
            "grid": [[float(v) for v in row] for row in grid],
        }

    @app.post("/sessions/{session_id}/explanations")
    async def post_explanations(session_id: str, request: Request):
        body = await request.json()
        if not isinstance(body, list):
            raise ApiError(400, "invalid-body",
                           "body must be a list of {ticket_id, text|skip} items")

        def apply(session: Session):
            try:
                return submit_explanations(session, body)
            except Exception as exc:  # noqa: BLE001
                raise translate(exc) from exc

        results = store.mutate(session_id, apply)
        return {"results": results}

    @app.post("/sessions/{session_id}/advance")
    async def post_advance(session_id: str):
        def apply(session: Session):
            if session.phase == PHASE_AWAITING and session.pending:
                raise ApiError(409, "tickets-pending",
                               "resolve pending tickets before advancing",
                               extra={"pending": [t.ticket_id for t in session.pending]})
            try:
                metrics = train_round(session)
            except Exception as exc:  # noqa: BLE001
                raise translate(exc) from exc
            return {
                "metrics": _metrics_view(metrics),
                "tickets": [_ticket_view(t) for t in session.pending],
                "done": session.phase == "done",
            }

        return store.mutate(session_id, apply)

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app


def parse_bind(bind: str) -> tuple[str, int]:
    host, _, port = bind.rpartition(":")
    return host or "127.0.0.1", int(port)
