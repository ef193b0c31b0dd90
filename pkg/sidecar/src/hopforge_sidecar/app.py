"""FastAPI service implementing the model-gateway wire protocol.

Requests and responses are validated against the shared schema files shipped
with the primary package, so the service and the pipeline's mock can never
drift apart. 4xx marks caller errors, 5xx backend failures; /health returns
503 until every configured model has loaded.
"""

from __future__ import annotations

import logging
import threading
from contextlib import asynccontextmanager

import jsonschema
from fastapi import Body, FastAPI
from fastapi.responses import JSONResponse

from hopforge.gateway import wire_schema

from .backends import build_backends
from .config import ENDPOINTS, ServiceConfig

logger = logging.getLogger(__name__)


def _semantic_problem(op: str, payload: dict, body: dict) -> str | None:
    """Shape checks beyond what JSON schema expresses."""
    if op == "ner":
        previous_end = -1
        for span in body["entities"]:
            if not 0 <= span["start"] < span["end"] <= len(payload["text"]):
                return f"span [{span['start']},{span['end']}) out of bounds"
            if span["start"] < previous_end:
                return "spans overlap or are unsorted"
            previous_end = span["end"]
    elif op == "nli":
        if len(body["entailment"]) != len(payload["hypotheses"]):
            return "entailment arity mismatch"
    elif op == "embed":
        vectors = body["vectors"]
        if len(vectors) != len(payload["texts"]):
            return "vector arity mismatch"
        if len({len(v) for v in vectors}) > 1:
            return "mixed vector dimensions"
        for vec in vectors:
            norm = sum(x * x for x in vec) ** 0.5
            if abs(norm - 1.0) > 1e-6:
                return f"vector norm {norm} not unit"
    return None


def create_app(config: ServiceConfig, defer_load: bool = False) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if not defer_load:
            app.state.backends = build_backends(config)
            app.state.ready = True
            logger.info("models loaded: %s", sorted(app.state.backends))
        yield

    app = FastAPI(title="hopforge inference sidecar", lifespan=lifespan)
    app.state.config = config
    app.state.ready = False
    app.state.backends = {}
    slots = threading.BoundedSemaphore(config.max_concurrent)

    def load_now() -> None:
        app.state.backends = build_backends(config)
        app.state.ready = True

    app.state.load_now = load_now

    @app.get("/health")
    def health():
        if not app.state.ready:
            return JSONResponse({"status": "loading", "endpoints": []}, status_code=503)
        return {"status": "ok", "endpoints": sorted(app.state.backends)}

    def handle(op: str, payload: dict):
        if not app.state.ready:
            return JSONResponse({"error": "models still loading"}, status_code=503)
        backend = app.state.backends.get(op)
        if backend is None:
            return JSONResponse({"error": f"endpoint {op} is disabled"}, status_code=404)
        try:
            jsonschema.validate(payload, wire_schema(f"{op}_request"))
        except jsonschema.ValidationError as exc:
            return JSONResponse({"error": f"bad request: {exc.message}"}, status_code=400)
        try:
            with slots:
                if op == "ner":
                    body = {"entities": backend.ner(payload["text"])}
                elif op == "nli":
                    body = {"entailment": backend.nli(payload["premise"], payload["hypotheses"])}
                elif op == "embed":
                    body = {"vectors": backend.embed(payload["texts"])}
                else:
                    body = {"content": backend.chat(payload["messages"], payload.get("schema"))}
        except Exception as exc:
            logger.exception("%s backend failed", op)
            return JSONResponse({"error": f"{op} backend failed: {exc}"}, status_code=500)
        try:
            jsonschema.validate(body, wire_schema(f"{op}_response"))
        except jsonschema.ValidationError as exc:
            logger.error("%s produced a non-conforming response: %s", op, exc.message)
            return JSONResponse({"error": f"{op} response violates protocol"}, status_code=500)
        problem = _semantic_problem(op, payload, body)
        if problem is not None:
            logger.error("%s produced a malformed response: %s", op, problem)
            return JSONResponse({"error": f"{op} response invalid: {problem}"}, status_code=500)
        return body

    for endpoint in ENDPOINTS:
        def route(payload: dict = Body(...), op: str = endpoint):
            return handle(op, payload)

        app.post(f"/{endpoint}")(route)

    return app
