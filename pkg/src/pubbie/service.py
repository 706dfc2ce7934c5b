"""HTTP API for sessions, chat, CSV upload and CSV export.

Endpoints (JSON unless noted):

    POST /api/sessions                -> {"session_id": ...}
    POST /api/sessions/{id}/chat      -> chat turn
    POST /api/sessions/{id}/upload    -> ingest confirmation turn (raw CSV body)
    GET  /api/sessions/{id}/export    -> CSV attachment + X-Export-Summary header
    GET  /api/health                  -> "ok"

Errors are JSON bodies {"error": {"code", "message", "retryable"}} with the
stable codes documented in the README; internals never leak.
"""

from __future__ import annotations

import logging
import os
import sqlite3
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import classifier
from .config import Config
from .errors import (
    EmptyTextError,
    PayloadTooLargeError,
    PubbieError,
    StoreUnavailableError,
    TextTooLongError,
)
from .llm import ChatProvider, HttpChatProvider, MockChatProvider, load_script
from .orchestrator import ChatTurn, Orchestrator, SessionStore
from .store import Database, PublicationStore
from .templates import TemplateRegistry

logger = logging.getLogger(__name__)

MAX_CHAT_TEXT_BYTES = 8 * 1024

_STATUS_BY_CODE = {
    "SESSION_NOT_FOUND": 404,
    "NO_RESULT_TO_EXPORT": 409,
    "SESSION_BUSY": 409,
    "EMPTY_TEXT": 400,
    "TEXT_TOO_LONG": 413,
    "PAYLOAD_TOO_LARGE": 413,
    "STORE_UNAVAILABLE": 503,
    "CONFIG_ERROR": 500,
    "INTERNAL": 500,
}


def make_provider(config: Config) -> ChatProvider:
    """Scripted mock when llm.mock_script is set, HTTP client otherwise."""
    if config.llm_mock_script:
        return MockChatProvider(load_script(config.llm_mock_script))
    api_key = os.environ.get(config.llm_api_key_env, "")
    return HttpChatProvider(
        endpoint=config.llm_endpoint,
        api_key=api_key,
        model=config.llm_model,
        timeout_ms=config.llm_timeout_ms,
        retries=config.llm_retries,
    )


def make_labeler(config: Config):
    """Program-prediction callable from the configured model file, if any."""
    path = config.classifier_model_path
    if not path:
        return None
    if not Path(path).is_file():
        logger.warning("classifier model %s not found; ingest will not predict", path)
        return None
    return classifier.nb_labeler(classifier.load_nb_model(path))


def build_orchestrator(
    config: Config, provider: Optional[ChatProvider] = None
) -> Orchestrator:
    db = Database(config.store_path)
    return Orchestrator(
        store=PublicationStore(db),
        sessions=SessionStore(db),
        provider=provider or make_provider(config),
        templates=TemplateRegistry(config.templates_dir or None),
        history_window=config.history_window,
        retrieval_k=config.retrieval_k,
        labeler=make_labeler(config),
        busy_policy=config.session_busy_policy,
    )


def _turn_payload(turn: ChatTurn, debug: bool) -> dict:
    payload = {
        "user_text": turn.user_text,
        "rewritten_text": turn.rewritten_text,
        "question_type": turn.question_type,
        "sql": turn.sql,
        "agent_text": turn.agent_text,
        "error_code": turn.error_code,
        "retryable": turn.retryable,
        "created_at": turn.created_at,
    }
    if debug:
        payload["sql_result_summary"] = turn.sql_result_summary
        payload["stage_trace"] = [[s, t] for s, t in turn.stage_trace]
    return payload


def _error_response(code: str, message: str, retryable: bool) -> JSONResponse:
    return JSONResponse(
        status_code=_STATUS_BY_CODE.get(code, 400),
        content={"error": {"code": code, "message": message, "retryable": retryable}},
    )


class ChatBody(BaseModel):
    text: str


def create_app(
    config: Optional[Config] = None,
    provider: Optional[ChatProvider] = None,
    debug: bool = False,
) -> FastAPI:
    config = config or Config()
    app = FastAPI(title="pubbie", docs_url=None, redoc_url=None)
    orchestrator = build_orchestrator(config, provider)
    app.state.orchestrator = orchestrator
    app.state.config = config

    @app.exception_handler(PubbieError)
    async def handle_pubbie_error(_request: Request, exc: PubbieError):
        return _error_response(exc.code, exc.message, exc.retryable)

    @app.exception_handler(Exception)
    async def handle_unexpected(_request: Request, exc: Exception):
        logger.exception("unhandled error: %s", exc)
        return _error_response("INTERNAL", "internal error", False)

    @app.get("/api/health")
    def health() -> PlainTextResponse:
        return PlainTextResponse("ok")

    @app.post("/api/sessions")
    def create_session() -> dict:
        try:
            session_id = orchestrator.create_session()
        except sqlite3.Error as exc:
            raise StoreUnavailableError(f"session store unavailable: {exc}") from exc
        return {"session_id": session_id}

    @app.post("/api/sessions/{session_id}/chat")
    def chat(session_id: str, body: ChatBody) -> dict:
        if not body.text.strip():
            raise EmptyTextError("chat text must not be empty")
        if len(body.text.encode("utf-8")) > MAX_CHAT_TEXT_BYTES:
            raise TextTooLongError(
                f"chat text exceeds {MAX_CHAT_TEXT_BYTES} bytes"
            )
        turn = orchestrator.handle_turn(session_id, body.text)
        return _turn_payload(turn, debug)

    @app.post("/api/sessions/{session_id}/upload")
    async def upload(session_id: str, request: Request) -> dict:
        limit = config.server_max_upload_bytes
        declared = request.headers.get("content-length")
        if declared and declared.isdigit() and int(declared) > limit:
            raise PayloadTooLargeError(f"upload exceeds {limit} bytes")
        chunks: list[bytes] = []
        size = 0
        async for chunk in request.stream():
            size += len(chunk)
            if size > limit:
                raise PayloadTooLargeError(f"upload exceeds {limit} bytes")
            chunks.append(chunk)
        turn = orchestrator.run_ingest_workflow(session_id, b"".join(chunks))
        return _turn_payload(turn, debug)

    @app.get("/api/sessions/{session_id}/export")
    def export(session_id: str) -> Response:
        payload, turn = orchestrator.run_export_workflow(session_id)
        stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S")
        summary = turn.agent_text.replace("\n", " ")
        summary = summary.encode("latin-1", "replace").decode("latin-1")
        return Response(
            content=payload,
            media_type="text/csv; charset=utf-8",
            headers={
                "Content-Disposition": f'attachment; filename="pubbie-export-{stamp}.csv"',
                "X-Export-Summary": summary,
            },
        )

    static_dir = config.server_static_dir
    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
