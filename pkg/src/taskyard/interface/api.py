"""JSON-over-HTTP API serving the CLI and the dashboard.

Error mapping: every module error carries a stable code and maps to one
status (404 UnknownJob, 409 IllegalTransition, 422 ConfigError/InvalidFilter,
403 GateError, 503 BackendUnavailable, ...).  GET /events is a server-push
stream: one JSON object per line with monotonically increasing sequence
numbers and a ``since`` cursor for gapless reconnection over the retained
history.
"""

from __future__ import annotations

import json
import logging
from typing import Optional

from fastapi import Depends, FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse

from .. import __version__
from ..errors import TaskyardError
from .payloads import Operations, canon_json, error_document

logger = logging.getLogger(__name__)


def _json_response(payload, status_code: int = 200) -> Response:
    return Response(content=canon_json(payload), status_code=status_code,
                    media_type="application/json")


def create_app(session, *, auth_token: str = "", on_shutdown=None) -> FastAPI:
    app = FastAPI(title="taskyard", version=__version__, docs_url=None,
                  redoc_url=None, openapi_url=None)
    # the dashboard is served as static files from another origin
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    ops = Operations(session)

    class _Unauthorized(TaskyardError):
        code = "Unauthorized"
        http_status = 401

    async def auth_dep(request: Request):
        if not auth_token:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {auth_token}":
            raise _Unauthorized("missing or invalid bearer token")

    guarded = [Depends(auth_dep)]

    @app.exception_handler(TaskyardError)
    async def taskyard_error_handler(request: Request, exc: TaskyardError):
        return JSONResponse(status_code=exc.http_status,
                            content=error_document(exc))

    async def _body(request: Request) -> dict:
        raw = await request.body()
        if not raw:
            return {}
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            from ..errors import InvalidFilter

            raise InvalidFilter(f"request body is not valid JSON: {exc}")

    # -- health / daemon ----------------------------------------------------

    @app.get("/health", dependencies=guarded)
    async def health():
        return _json_response({
            "status": "ok",
            "version": __version__,
            "jobs": len(session.repository),
            "monitor_running": session.monitor.running,
        })

    @app.post("/daemon/shutdown", dependencies=guarded)
    async def shutdown():
        if on_shutdown is not None:
            on_shutdown()
        return _json_response({"stopping": True})

    # -- jobs ------------------------------------------------------------------

    @app.get("/jobs", dependencies=guarded)
    async def list_jobs(status: Optional[str] = None, name: Optional[str] = None,
                        application: Optional[str] = None,
                        backend: Optional[str] = None):
        return _json_response(ops.list_jobs({
            "status": status, "name": name,
            "application": application, "backend": backend,
        }))

    @app.post("/jobs", dependencies=guarded)
    async def create_job(request: Request):
        return _json_response(ops.create_job(await _body(request)), 201)

    @app.get("/jobs/{fqid}", dependencies=guarded)
    async def get_job(fqid: str):
        return _json_response(ops.get_job(fqid))

    @app.delete("/jobs/{job_id}", dependencies=guarded)
    async def delete_job(job_id: int):
        return _json_response(ops.remove_job(job_id))

    @app.post("/jobs/{job_id}/submit", dependencies=guarded)
    async def submit_job(job_id: int):
        return _json_response(ops.submit_job(job_id))

    @app.post("/jobs/{job_id}/kill", dependencies=guarded)
    async def kill_job(job_id: int):
        return _json_response(ops.kill_job(job_id))

    @app.post("/jobs/{job_id}/resubmit", dependencies=guarded)
    async def resubmit_job(job_id: int):
        return _json_response(ops.resubmit_job(job_id))

    @app.post("/jobs/{job_id}/copy", dependencies=guarded)
    async def copy_job(job_id: int, request: Request):
        return _json_response(ops.copy_job(job_id, await _body(request)), 201)

    @app.get("/jobs/{fqid}/peek", dependencies=guarded)
    async def peek_job(fqid: str, file: str = "stdout", lines: Optional[int] = None):
        return _json_response(ops.peek_job(fqid, file, lines))

    @app.get("/jobs/{job_id}/subjobs", dependencies=guarded)
    async def subjobs(job_id: int):
        return _json_response(ops.subjobs(job_id))

    @app.post("/jobs/{job_id}/merge", dependencies=guarded)
    async def merge_job(job_id: int, request: Request):
        return _json_response(ops.merge_job(job_id, await _body(request)))

    # -- schemas / templates / jobtree ----------------------------------------------

    @app.get("/schemas", dependencies=guarded)
    async def schemas():
        return _json_response(ops.schemas())

    @app.get("/templates", dependencies=guarded)
    async def list_templates():
        return _json_response(ops.list_templates())

    @app.post("/templates", dependencies=guarded)
    async def save_template(request: Request):
        return _json_response(ops.save_template(await _body(request)), 201)

    @app.post("/templates/{template_id}/instantiate", dependencies=guarded)
    async def instantiate_template(template_id: int, request: Request):
        return _json_response(
            ops.instantiate_template(template_id, await _body(request)), 201)

    @app.get("/jobtree", dependencies=guarded)
    async def jobtree_get(path: str = "/"):
        return _json_response(ops.jobtree_get(path))

    @app.post("/jobtree", dependencies=guarded)
    async def jobtree_post(request: Request):
        return _json_response(ops.jobtree_post(await _body(request)))

    # -- credential --------------------------------------------------------------------

    @app.get("/credential", dependencies=guarded)
    async def credential():
        return _json_response(ops.credential())

    @app.post("/credential/renew", dependencies=guarded)
    async def credential_renew(request: Request):
        return _json_response(ops.credential_renew(await _body(request)))

    @app.post("/credential/destroy", dependencies=guarded)
    async def credential_destroy():
        return _json_response(ops.credential_destroy())

    # -- robot -------------------------------------------------------------------------

    @app.get("/robot/runs", dependencies=guarded)
    async def robot_runs():
        return _json_response(ops.robot_runs())

    @app.post("/robot/run", dependencies=guarded)
    async def robot_run(request: Request, wait: bool = False):
        return _json_response(ops.robot_run(await _body(request), wait=wait), 201)

    # -- event stream --------------------------------------------------------------------

    @app.get("/events", dependencies=guarded)
    async def events(since: int = 0, limit: Optional[int] = None,
                     follow: bool = True):
        stream_log = session.stream_log

        def generate():
            cursor = since
            sent = 0
            while True:
                batch = (stream_log.wait_for_more(cursor, timeout=0.5)
                         if follow else stream_log.events_since(cursor))
                for event in batch:
                    yield json.dumps(event.to_document(), sort_keys=True) + "\n"
                    cursor = event.seq
                    sent += 1
                    if limit is not None and sent >= limit:
                        return
                if not follow:
                    return

        return StreamingResponse(generate(), media_type="application/x-ndjson")

    return app
