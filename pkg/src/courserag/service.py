"""HTTP+JSON API over the engine.

Admin endpoints (bot lifecycle, ingestion, usage, model switching) require
the admin bearer token; the chat endpoint requires a per-course access
token. Streaming replies use server-sent events.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from typing import Iterator

from fastapi import FastAPI, Query, Request, Response
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from .engine import ChatStream, CourseBotEngine
from .errors import (
    AuthFailure,
    BackendUnavailable,
    BadRequest,
    BotNotFound,
    BudgetTooSmall,
    ContextOverflow,
    CourseRagError,
    JobNotFound,
    Unauthorized,
    UnknownProfile,
    UnsupportedFormat,
)

_STATUS_BY_ERROR: list[tuple[type[CourseRagError], int]] = [
    (Unauthorized, 401),
    (AuthFailure, 502),
    (BotNotFound, 404),
    (JobNotFound, 404),
    (UnknownProfile, 400),
    (UnsupportedFormat, 400),
    (BadRequest, 400),
    (BudgetTooSmall, 400),
    (ContextOverflow, 400),
    (BackendUnavailable, 503),
]


def _status_for(exc: CourseRagError) -> int:
    for etype, status in _STATUS_BY_ERROR:
        if isinstance(exc, etype):
            return status
    return 500


def _bearer(request: Request) -> str | None:
    header = request.headers.get("authorization", "")
    if header.lower().startswith("bearer "):
        return header[len("bearer ") :].strip()
    return None


class CreateBotRequest(BaseModel):
    course_label: str
    bot_id: str | None = None
    persona: str | None = None
    retrieval: dict | None = None
    profile_id: str | None = None


class ChatRequest(BaseModel):
    message: str
    conversation_id: str = "default"
    user_id: str | None = None
    stream: bool = False


class SwitchModelRequest(BaseModel):
    profile_id: str


def _sse(event: str | None, data: dict) -> str:
    payload = json.dumps(data, ensure_ascii=False)
    if event:
        return f"event: {event}\ndata: {payload}\n\n"
    return f"data: {payload}\n\n"


def _stream_events(stream: ChatStream) -> Iterator[str]:
    yield _sse(
        "sources",
        {
            "sources": [ref.to_dict() for ref in stream.sources],
            "fallback": stream.fallback,
            "profile_id": stream.profile_id,
            "corpus_version": stream.corpus_version,
        },
    )
    try:
        for fragment in stream.fragments:
            yield _sse(None, {"text": fragment})
    except BackendUnavailable as exc:
        yield _sse("error", {"error": str(exc), "retriable": True})
        return
    yield _sse("done", {"finished": True})


def create_app(engine: CourseBotEngine) -> FastAPI:
    app = FastAPI(title="courserag", version="0.1.0")

    @app.exception_handler(CourseRagError)
    async def _handle_error(request: Request, exc: CourseRagError):
        status = _status_for(exc)
        body = {"error": type(exc).__name__, "detail": str(exc)}
        headers = {"Retry-After": "5"} if status == 503 else None
        return JSONResponse(status_code=status, content=body, headers=headers)

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    @app.post("/bots", status_code=201)
    def create_bot(body: CreateBotRequest, request: Request) -> dict:
        engine.authorize_admin(_bearer(request))
        return engine.create_bot(
            body.course_label,
            bot_id=body.bot_id,
            persona=body.persona,
            retrieval=body.retrieval,
            profile_id=body.profile_id,
        )

    @app.get("/bots")
    def list_bots(request: Request) -> list[dict]:
        engine.authorize_admin(_bearer(request))
        return engine.list_bots()

    @app.get("/bots/{bot_id}")
    def bot_info(bot_id: str, request: Request) -> dict:
        engine.authorize_admin(_bearer(request))
        return engine.bot_info(bot_id)

    @app.post("/bots/{bot_id}/tokens", status_code=201)
    def issue_token(bot_id: str, request: Request) -> dict:
        engine.authorize_admin(_bearer(request))
        return {"access_token": engine.issue_token(bot_id)}

    @app.post("/bots/{bot_id}/documents", status_code=201)
    async def upload_documents(
        bot_id: str,
        request: Request,
        filename: str = Query(default=""),
        replace: bool = Query(default=False),
    ) -> dict:
        """Raw-body upload: one text/markdown/html file, or a zip archive
        whose supported members are all staged."""
        engine.authorize_admin(_bearer(request))
        data = await request.body()
        if not filename:
            content_type = request.headers.get("content-type", "")
            if "zip" in content_type:
                filename = "upload.zip"
            else:
                raise BadRequest("filename query parameter required")
        stored = engine.upload_documents(bot_id, filename, data, replace=replace)
        return {"stored": stored}

    @app.get("/bots/{bot_id}/documents")
    def list_documents(bot_id: str, request: Request) -> dict:
        engine.authorize_admin(_bearer(request))
        return {"documents": engine.list_documents(bot_id)}

    @app.post("/bots/{bot_id}/ingest", status_code=202)
    def start_ingestion(bot_id: str, request: Request) -> dict:
        engine.authorize_admin(_bearer(request))
        return engine.start_ingestion(bot_id)

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str, request: Request) -> dict:
        engine.authorize_admin(_bearer(request))
        return engine.job_status(job_id)

    @app.post("/bots/{bot_id}/chat")
    def chat(bot_id: str, body: ChatRequest, request: Request) -> Response:
        token = _bearer(request)
        wants_stream = body.stream or (
            "text/event-stream" in request.headers.get("accept", "")
        )
        if wants_stream:
            stream = engine.chat_stream(
                bot_id,
                token or "",
                body.message,
                conversation_id=body.conversation_id,
                user_id=body.user_id,
            )
            return StreamingResponse(
                _stream_events(stream), media_type="text/event-stream"
            )
        result = engine.chat(
            bot_id,
            token or "",
            body.message,
            conversation_id=body.conversation_id,
            user_id=body.user_id,
        )
        return JSONResponse(
            {
                "reply": result.reply,
                "sources": [ref.to_dict() for ref in result.sources],
                "fallback": result.fallback,
                "profile_id": result.profile_id,
                "corpus_version": result.corpus_version,
                "usage": asdict(result.usage),
            }
        )

    @app.get("/bots/{bot_id}/usage")
    def usage(
        bot_id: str,
        request: Request,
        since: float | None = Query(default=None),
        until: float | None = Query(default=None),
    ) -> dict:
        engine.authorize_admin(_bearer(request))
        report = engine.usage_report(bot_id, since=since, until=until)
        return {
            "bot_id": report.bot_id,
            "request_count": report.request_count,
            "tokens_in": report.tokens_in,
            "tokens_out": report.tokens_out,
            "total_cost_micro": report.total_cost_micro,
            "total_cost_dollars": report.total_cost_dollars,
            "per_pseudonym_cost_micro": report.per_pseudonym_cost_micro,
            "cost_per_active_user_micro": report.cost_per_active_user_micro,
        }

    @app.put("/bots/{bot_id}/model")
    def switch_model(bot_id: str, body: SwitchModelRequest, request: Request) -> dict:
        engine.authorize_admin(_bearer(request))
        return {"profile_id": engine.switch_profile(bot_id, body.profile_id)}

    return app
