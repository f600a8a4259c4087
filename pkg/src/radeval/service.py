"""JSON-over-HTTP interface for the annotation UI and external tools.

Versioned /v1 endpoints over a single-writer workflow core: raters poll
for their next blinded task, submit responses (idempotent under retry),
and fetch case images they are authorized for. Blinding holds at the
wire: no endpoint response carries report source labels during active
phases. Errors are uniform {code, field, message} objects.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import os
import secrets
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from .workflow import (
    Choice,
    CorrectionResponse,
    DuplicateSubmissionError,
    EditReason,
    PreferenceResponse,
    SpanEdit,
    UnassignedRaterError,
    UnknownTaskError,
    WorkflowError,
    WorkflowStore,
)

DEFAULT_TOKEN_TTL = 8 * 3600.0


@dataclass(frozen=True)
class ServiceConfig:
    """Service settings; resolution precedence is env > file > default."""

    listen_host: str = "127.0.0.1"
    listen_port: int = 8321
    data_dir: str = "./study"
    admin_token: str = ""
    token_secret: str = ""
    token_ttl_seconds: float = DEFAULT_TOKEN_TTL

    _ENV_KEYS = {
        "listen_host": "RADEVAL_LISTEN_HOST",
        "listen_port": "RADEVAL_LISTEN_PORT",
        "data_dir": "RADEVAL_DATA_DIR",
        "admin_token": "RADEVAL_ADMIN_TOKEN",
        "token_secret": "RADEVAL_TOKEN_SECRET",
        "token_ttl_seconds": "RADEVAL_TOKEN_TTL",
    }

    @classmethod
    def load(
        cls, path: str | Path | None = None, env: Mapping[str, str] | None = None
    ) -> "ServiceConfig":
        env = os.environ if env is None else env
        values: dict = {}
        if path is not None:
            values.update(json.loads(Path(path).read_text("utf-8")))
        for attr, key in cls._ENV_KEYS.items():
            if key in env:
                values[attr] = env[key]
        config = cls(
            listen_host=str(values.get("listen_host", cls.listen_host)),
            listen_port=int(values.get("listen_port", cls.listen_port)),
            data_dir=str(values.get("data_dir", cls.data_dir)),
            admin_token=str(values.get("admin_token", "")),
            token_secret=str(values.get("token_secret", "")),
            token_ttl_seconds=float(values.get("token_ttl_seconds", DEFAULT_TOKEN_TTL)),
        )
        if not config.token_secret:
            config = replace(config, token_secret=secrets.token_hex(32))
        return config


class TokenError(ValueError):
    pass


def issue_token(rater_id: str, secret: str, ttl_seconds: float, now: float | None = None) -> tuple[str, float]:
    now = time.time() if now is None else now
    expiry = now + ttl_seconds
    payload = f"{rater_id}:{expiry:.3f}"
    sig = hmac.new(secret.encode(), payload.encode(), hashlib.sha256).hexdigest()
    token = base64.urlsafe_b64encode(payload.encode()).decode() + "." + sig
    return token, expiry


def verify_token(token: str, secret: str, now: float | None = None) -> str:
    """Returns the rater_id; raises TokenError for bad or expired tokens."""
    now = time.time() if now is None else now
    try:
        encoded, sig = token.rsplit(".", 1)
        payload = base64.urlsafe_b64decode(encoded.encode()).decode()
        rater_id, expiry_str = payload.rsplit(":", 1)
        expiry = float(expiry_str)
    except Exception:
        raise TokenError("malformed token") from None
    expected = hmac.new(secret.encode(), payload.encode(), hashlib.sha256).hexdigest()
    if not hmac.compare_digest(sig, expected):
        raise TokenError("bad signature")
    if now >= expiry:
        raise TokenError("token expired")
    return rater_id


def _error(status: int, code: str, message: str, field_name: str | None = None) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"code": code, "field": field_name, "message": message},
    )


def _parse_response_body(body: Mapping, rater_id: str):
    kind = body.get("kind")
    if kind not in ("preference", "correction"):
        raise FieldError("kind", "must be 'preference' or 'correction'")
    task_id = _require_str(body, "task_id")
    timestamp = float(body.get("timestamp", time.time()))
    if kind == "preference":
        choice_raw = _require_str(body, "choice")
        try:
            choice = Choice(choice_raw)
        except ValueError:
            raise FieldError("choice", f"must be one of {[c.value for c in Choice]}")
        justification = _require_str(body, "justification")
        return PreferenceResponse(
            task_id=task_id,
            rater_id=rater_id,
            choice=choice,
            justification=justification,
            timestamp=timestamp,
        )
    if "image_quality_ok" not in body or not isinstance(body["image_quality_ok"], bool):
        raise FieldError("image_quality_ok", "must be answered (boolean)")
    edits_raw = body.get("edits", [])
    if not isinstance(edits_raw, list):
        raise FieldError("edits", "must be a list")
    edits = []
    for i, e in enumerate(edits_raw):
        try:
            reason = EditReason(str(e["reason"]))
        except (KeyError, ValueError):
            raise FieldError(
                f"edits[{i}].reason", f"must be one of {[r.value for r in EditReason]}"
            )
        try:
            edits.append(
                SpanEdit(
                    start=int(e["start"]),
                    end=int(e["end"]),
                    reason=reason,
                    clinically_significant=bool(e["clinically_significant"]),
                    replacement=str(e["replacement"]),
                )
            )
        except (KeyError, TypeError, ValueError):
            raise FieldError(f"edits[{i}]", "must have start, end, reason, clinically_significant, replacement")
    return CorrectionResponse(
        task_id=task_id,
        rater_id=rater_id,
        image_quality_ok=body["image_quality_ok"],
        edits=tuple(edits),
        displayed_text_sha256=_require_str(body, "displayed_text_sha256"),
        timestamp=timestamp,
    )


class FieldError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(message)
        self.field_name = field_name


def _require_str(body: Mapping, name: str) -> str:
    value = body.get(name)
    if not isinstance(value, str) or not value:
        raise FieldError(name, "required string field")
    return str(value)


def create_app(store: WorkflowStore, config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="radeval service", version="1")

    def authenticate(request: Request) -> str:
        header = request.headers.get("authorization", "")
        if not header.lower().startswith("bearer "):
            raise TokenError("missing bearer token")
        rater_id = verify_token(header[7:].strip(), config.token_secret)
        if rater_id not in store.raters:
            raise TokenError("unknown rater")
        return rater_id

    @app.post("/v1/session")
    async def create_session(request: Request):
        try:
            body = await request.json()
        except Exception:
            return _error(400, "bad_request", "body must be JSON")
        rater_id = body.get("rater_id")
        if not isinstance(rater_id, str) or not rater_id:
            return _error(400, "validation", "required string field", "rater_id")
        if rater_id not in store.raters:
            return _error(404, "unknown_rater", f"rater {rater_id!r} is not registered", "rater_id")
        token, expiry = issue_token(rater_id, config.token_secret, config.token_ttl_seconds)
        return {"token": token, "expires_at": expiry}

    @app.get("/v1/tasks/next")
    async def next_task(request: Request):
        try:
            rater_id = authenticate(request)
        except TokenError as exc:
            return _error(401, "unauthorized", str(exc))
        task_id = store.next_task_for(rater_id)
        if task_id is None:
            return {"status": "done", "task": None}
        payload = store.task_payload(task_id)
        case_id = payload["case_id"]
        return {
            "status": "task",
            "task": payload,
            "image_uri": f"/v1/cases/{case_id}/image",
        }

    @app.post("/v1/responses")
    async def submit_response(request: Request):
        try:
            rater_id = authenticate(request)
        except TokenError as exc:
            return _error(401, "unauthorized", str(exc))
        try:
            body = await request.json()
        except Exception:
            return _error(400, "bad_request", "body must be JSON")
        try:
            response = _parse_response_body(body, rater_id)
        except FieldError as exc:
            return _error(400, "validation", str(exc), exc.field_name)
        try:
            seq = store.record_response(response)
        except UnknownTaskError as exc:
            return _error(404, "unknown_task", str(exc), "task_id")
        except UnassignedRaterError as exc:
            return _error(403, "unassigned", str(exc))
        except DuplicateSubmissionError as exc:
            return _error(409, "conflict", str(exc))
        except WorkflowError as exc:
            return _error(400, "validation", str(exc))
        return {"sequence_number": seq}

    @app.get("/v1/cases/{case_id}/image")
    async def fetch_image(case_id: str, request: Request):
        try:
            rater_id = authenticate(request)
        except TokenError as exc:
            return _error(401, "unauthorized", str(exc))
        assigned_cases = {
            store.tasks[tid].case_id for tid in store.rater_queues.get(rater_id, [])
        }
        if case_id not in assigned_cases:
            return _error(403, "forbidden", f"rater has no task on case {case_id}")
        case = store.cases.get(case_id)
        if case is None:
            return _error(404, "unknown_case", f"no case {case_id}")
        image_path = Path(config.data_dir) / case.image_ref
        if not image_path.exists():
            return _error(404, "missing_image", f"image for case {case_id} not found")
        data = image_path.read_bytes()
        digest = hashlib.sha256(data).hexdigest()
        return Response(
            content=data,
            media_type="image/png",
            headers={"ETag": f'"{digest}"', "Cache-Control": "private, max-age=86400"},
        )

    @app.get("/v1/admin/progress")
    async def progress(request: Request):
        supplied = request.headers.get("x-admin-token", "")
        if not config.admin_token or not hmac.compare_digest(supplied, config.admin_token):
            return _error(401, "unauthorized", "admin token required")
        by_phase: dict[str, dict[str, int]] = {}
        for task in store.tasks.values():
            bucket = by_phase.setdefault(task.phase, {"total": 0, "complete": 0})
            bucket["total"] += 1
            if store.is_complete(task.task_id):
                bucket["complete"] += 1
        return {
            "tasks_total": len(store.tasks),
            "tasks_complete": sum(p["complete"] for p in by_phase.values()),
            "responses": len(store.responses),
            "by_phase": by_phase,
        }

    return app
