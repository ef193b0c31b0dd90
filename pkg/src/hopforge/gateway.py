"""Single abstraction over model inference: NER, NLI, embeddings, chat.

Two transports satisfy the same JSON-over-HTTP contract: a real HTTP client
and a deterministic scriptable mock for offline runs. Responses from either
side are validated against the shared schema files in ``hopforge/schemas``,
which are the single source of truth for the wire protocol.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import requests

from .errors import GatewayError, ProtocolError, SchemaViolationError
from .textutil import find_term

logger = logging.getLogger(__name__)

OPERATIONS = ("ner", "nli", "embed", "chat")
RETRY_BACKOFF_S = 0.2
_NORM_TOLERANCE = 1e-6


def _load_schema(name: str) -> dict:
    text = resources.files("hopforge.schemas").joinpath(f"{name}.json").read_text("utf-8")
    return json.loads(text)


_SCHEMAS: dict[str, dict] = {}


def wire_schema(name: str) -> dict:
    """Shared wire-protocol schema, e.g. ``nli_response``."""
    if name not in _SCHEMAS:
        _SCHEMAS[name] = _load_schema(name)
    return _SCHEMAS[name]


def canonical_payload(payload: Any) -> str:
    """Whitespace-normalized, key-sorted serialization used for fingerprints."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def fingerprint(operation: str, payload: Any) -> str:
    digest = hashlib.sha256(f"{operation}:{canonical_payload(payload)}".encode()).hexdigest()
    return digest[:32]


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    timeout_ms: int = 30_000
    max_retries: int = 2
    api_key_env: str | None = None
    max_concurrency: int = 8

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")


@dataclass(frozen=True)
class EntitySpan:
    start: int
    end: int
    label: str
    score: float


@dataclass
class MockRule:
    """Pattern-matched canned response; ``when`` keys depend on the operation.

    Supported matchers: ``text_contains`` (ner), ``premise_contains`` (nli),
    ``content_contains`` (chat, matched against the concatenated message
    contents), ``any_text_contains`` (embed). A matcher value may be a list,
    in which case every needle must be present. ``respond`` is either a
    literal response body or one of the generator forms expanded by
    :func:`expand_mock_response`.
    """

    op: str
    when: dict[str, Any]
    respond: dict[str, Any]

    def matches(self, op: str, payload: dict) -> bool:
        if op != self.op:
            return False
        for key, needle in self.when.items():
            if key == "text_contains":
                hay = payload.get("text", "")
            elif key == "premise_contains":
                hay = payload.get("premise", "")
            elif key == "content_contains":
                hay = "\n".join(m.get("content", "") for m in payload.get("messages", []))
            elif key == "any_text_contains":
                hay = "\n".join(payload.get("texts", []))
            else:
                raise ValueError(f"unknown mock matcher {key!r}")
            needles = needle if isinstance(needle, list) else [needle]
            if any(n not in hay for n in needles):
                return False
        return True


def deterministic_unit_vector(text: str, dim: int = 8) -> list[float]:
    """Stable pseudo-embedding derived from a hash of the text."""
    digest = hashlib.sha256(text.encode()).digest()
    raw = []
    for i in range(dim):
        chunk = digest[(2 * i) % len(digest)] * 256 + digest[(2 * i + 1) % len(digest)]
        raw.append(chunk / 65535.0 - 0.5)
    norm = math.sqrt(sum(x * x for x in raw)) or 1.0
    return [x / norm for x in raw]


def expand_mock_response(op: str, payload: dict, spec: dict[str, Any]) -> dict:
    """Turn a compact response spec into a full wire-protocol body.

    Literal bodies pass through untouched. Generator forms:
      ner   {"spans_for": [{"anchor", "label", "score"}...]} -> spans located
            in the request text (anchors not present are skipped)
      nli   {"by_hypothesis": [{"contains", "score"}...], "default": f}
      embed {"dim": n} -> hash-derived unit vectors
      chat  {"json": obj} -> content set to the canonical serialization
    """
    if op == "ner" and "spans_for" in spec:
        text = payload["text"]
        found = []
        for item in spec["spans_for"]:
            pos = find_term(text, item["anchor"])
            if pos < 0:
                continue
            found.append(
                {
                    "start": pos,
                    "end": pos + len(item["anchor"]),
                    "label": item["label"],
                    "score": item["score"],
                }
            )
        # longest match wins on overlap, like a real tagger
        found.sort(key=lambda e: (e["start"], e["start"] - e["end"]))
        entities: list[dict] = []
        for span in found:
            if entities and span["start"] < entities[-1]["end"]:
                continue
            entities.append(span)
        return {"entities": entities}
    if op == "nli" and "by_hypothesis" in spec:
        default = spec.get("default", 0.0)
        scores = []
        for hyp in payload["hypotheses"]:
            value = default
            for rule in spec["by_hypothesis"]:
                if rule["contains"] in hyp:
                    value = rule["score"]
                    break
            scores.append(value)
        return {"entailment": scores}
    if op == "embed" and "dim" in spec:
        return {"vectors": [deterministic_unit_vector(t, spec["dim"]) for t in payload["texts"]]}
    if op == "chat" and "json" in spec:
        return {"content": canonical_payload(spec["json"])}
    return spec


@dataclass
class MockScript:
    """Deterministic canned responses keyed by request fingerprint.

    ``responses`` maps exact fingerprints to bodies; ``rules`` are matched in
    order when no fingerprint hits; ``default_policy`` decides the rest:
    ``error`` simulates a persistent 5xx, ``echo`` derives a neutral response
    from the input, ``constant`` serves ``defaults[op]``.
    """

    responses: dict[str, dict] = field(default_factory=dict)
    rules: list[MockRule] = field(default_factory=list)
    default_policy: str = "error"
    defaults: dict[str, dict] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.default_policy not in ("error", "echo", "constant"):
            raise ValueError(f"unknown default_policy {self.default_policy!r}")

    def add(self, op: str, payload: dict, response: dict) -> str:
        key = fingerprint(op, payload)
        self.responses[key] = response
        return key

    def add_rule(self, op: str, when: dict[str, str], respond: dict) -> None:
        self.rules.append(MockRule(op=op, when=when, respond=respond))

    def lookup(self, op: str, payload: dict) -> dict:
        """Resolve a request to a response body; raises on ``error`` policy."""
        key = fingerprint(op, payload)
        if key in self.responses:
            return expand_mock_response(op, payload, self.responses[key])
        for rule in self.rules:
            if rule.matches(op, payload):
                return expand_mock_response(op, payload, rule.respond)
        if self.default_policy == "constant" and op in self.defaults:
            return expand_mock_response(op, payload, self.defaults[op])
        if self.default_policy == "echo":
            return self._echo(op, payload)
        raise KeyError(f"no scripted response for {op} request {key}")

    @staticmethod
    def _echo(op: str, payload: dict) -> dict:
        if op == "ner":
            return {"entities": []}
        if op == "nli":
            return {"entailment": [0.0] * len(payload["hypotheses"])}
        if op == "embed":
            return {"vectors": [deterministic_unit_vector(t) for t in payload["texts"]]}
        return {"content": payload["messages"][-1]["content"]}

    def to_json_obj(self) -> dict:
        return {
            "responses": self.responses,
            "rules": [{"op": r.op, "when": r.when, "respond": r.respond} for r in self.rules],
            "default_policy": self.default_policy,
            "defaults": self.defaults,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "MockScript":
        return cls(
            responses=dict(obj.get("responses", {})),
            rules=[MockRule(**r) for r in obj.get("rules", [])],
            default_policy=obj.get("default_policy", "error"),
            defaults=dict(obj.get("defaults", {})),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_obj(), sort_keys=True, indent=2, ensure_ascii=False) + "\n",
            "utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "MockScript":
        return cls.from_json_obj(json.loads(Path(path).read_text("utf-8")))


class ModelGateway:
    """Shared retry, validation and metrics around a transport hook.

    Subclasses implement ``_post``. 4xx-style caller errors raise
    :class:`ProtocolError` without retry; transport failures are retried
    ``max_retries`` times with a fixed backoff, then raise
    :class:`GatewayError`.
    """

    def __init__(self, config: EndpointConfig) -> None:
        self.config = config
        self.calls: Counter[str] = Counter()
        self._slots = threading.BoundedSemaphore(config.max_concurrency)
        self._metrics_lock = threading.Lock()

    # -- operations ---------------------------------------------------

    def ner(self, text: str) -> list[EntitySpan]:
        if not text:
            raise ValueError("ner requires non-empty text")
        body = self._request("ner", {"text": text})
        spans = [EntitySpan(**e) for e in body["entities"]]
        self._check_spans(spans, len(text))
        return spans

    def nli(self, premise: str, hypotheses: list[str]) -> list[float]:
        if not hypotheses:
            raise ValueError("nli requires at least one hypothesis")
        body = self._request("nli", {"premise": premise, "hypotheses": list(hypotheses)})
        scores = body["entailment"]
        if len(scores) != len(hypotheses):
            raise ProtocolError(
                f"nli arity mismatch: {len(hypotheses)} hypotheses, {len(scores)} scores"
            )
        return [float(s) for s in scores]

    def embed(self, texts: list[str]) -> list[list[float]]:
        if not texts:
            raise ValueError("embed requires at least one text")
        body = self._request("embed", {"texts": list(texts)})
        vectors = body["vectors"]
        if len(vectors) != len(texts):
            raise ProtocolError(f"embed arity mismatch: {len(texts)} texts, {len(vectors)} vectors")
        dims = {len(v) for v in vectors}
        if len(dims) != 1:
            raise ProtocolError(f"embed vectors have mixed dimensions {sorted(dims)}")
        for vec in vectors:
            norm = math.sqrt(sum(x * x for x in vec))
            if abs(norm - 1.0) > _NORM_TOLERANCE:
                raise ProtocolError(f"embed vector norm {norm} outside 1 +/- {_NORM_TOLERANCE}")
        return [[float(x) for x in v] for v in vectors]

    def chat(self, messages: list[dict[str, str]], response_schema: dict | None = None) -> Any:
        if not messages:
            raise ValueError("chat requires at least one message")
        body = self._request("chat", {"messages": list(messages), "schema": response_schema})
        content = body["content"]
        if response_schema is None:
            return content
        try:
            parsed = json.loads(content)
        except json.JSONDecodeError as exc:
            raise SchemaViolationError(f"chat content is not valid JSON: {exc}") from exc
        try:
            jsonschema.validate(parsed, response_schema)
        except jsonschema.ValidationError as exc:
            raise SchemaViolationError(f"chat content violates response schema: {exc.message}") from exc
        return parsed

    # -- plumbing -----------------------------------------------------

    def _request(self, op: str, payload: dict) -> dict:
        jsonschema.validate(payload, wire_schema(f"{op}_request"))
        attempts = self.config.max_retries + 1
        last_error: Exception | None = None
        with self._slots:
            for attempt in range(attempts):
                with self._metrics_lock:
                    self.calls[op] += 1
                try:
                    body = self._post(op, payload)
                    break
                except ProtocolError:
                    raise
                except Exception as exc:  # transport failure: retry
                    last_error = exc
                    if attempt + 1 < attempts:
                        logger.debug("%s attempt %d failed (%s), retrying", op, attempt + 1, exc)
                        time.sleep(RETRY_BACKOFF_S)
            else:
                raise GatewayError(f"{op} failed after {attempts} attempts: {last_error}")
        try:
            jsonschema.validate(body, wire_schema(f"{op}_response"))
        except jsonschema.ValidationError as exc:
            raise ProtocolError(f"{op} response violates the wire schema: {exc.message}") from exc
        return body

    def _post(self, op: str, payload: dict) -> dict:
        raise NotImplementedError

    @staticmethod
    def _check_spans(spans: list[EntitySpan], text_len: int) -> None:
        previous_end = -1
        for span in spans:
            if not (0 <= span.start < span.end <= text_len):
                raise ProtocolError(f"ner span [{span.start},{span.end}) out of bounds")
            if span.start < previous_end:
                raise ProtocolError("ner spans overlap or are unsorted")
            previous_end = span.end


class HttpGateway(ModelGateway):
    """POSTs each operation to ``{base_url}/{op}`` per the wire protocol."""

    def __init__(self, config: EndpointConfig, session: requests.Session | None = None) -> None:
        super().__init__(config)
        self._session = session or requests.Session()

    def _post(self, op: str, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env:
            key = os.environ.get(self.config.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        response = self._session.post(
            f"{self.config.base_url.rstrip('/')}/{op}",
            json=payload,
            headers=headers,
            timeout=self.config.timeout_ms / 1000.0,
        )
        if 400 <= response.status_code < 500:
            raise ProtocolError(f"{op} rejected with HTTP {response.status_code}: {response.text[:200]}")
        if response.status_code != 200:
            raise RuntimeError(f"{op} returned HTTP {response.status_code}")
        return response.json()


class MockGateway(ModelGateway):
    """Replays a :class:`MockScript`; replay is deterministic by construction."""

    def __init__(self, script: MockScript, config: EndpointConfig | None = None) -> None:
        super().__init__(config or EndpointConfig(base_url="mock://", max_retries=2))
        self.script = script
        self.attempts: Counter[str] = Counter()

    def _post(self, op: str, payload: dict) -> dict:
        with self._metrics_lock:
            self.attempts[op] += 1
        try:
            return self.script.lookup(op, payload)
        except KeyError as exc:
            raise RuntimeError(f"scripted failure: {exc}") from exc
