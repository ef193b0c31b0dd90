"""Protocol self-check: one canned request per endpoint, schema-validated.

Works against anything with requests-style ``get``/``post`` (a live base URL
wrapper or a FastAPI TestClient).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import jsonschema
import requests

from hopforge.gateway import wire_schema

from .config import ENDPOINTS

CANNED_REQUESTS = {
    "ner": {"text": "Albert Einstein crossed the Pacific Ocean to reach Tokyo."},
    "nli": {
        "premise": "Japan Airlines painted actor Shingo Katori on one of its jets.",
        "hypotheses": [
            "Shingo Katori has attribute Japan Airlines",
            "Japan Airlines causes Shingo Katori",
        ],
    },
    "embed": {"texts": ["alpha", "beta", "gamma"]},
    "chat": {"messages": [{"role": "user", "content": "Name any city."}], "schema": None},
}


@dataclass
class EndpointResult:
    endpoint: str
    status: str  # ok | failed | disabled
    detail: str = ""


@dataclass
class SelfcheckReport:
    results: list[EndpointResult] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.status != "failed" for r in self.results)

    def failing_endpoints(self) -> list[str]:
        return [f"/{r.endpoint}" for r in self.results if r.status == "failed"]

    def lines(self) -> list[str]:
        out = []
        for r in self.results:
            suffix = f" ({r.detail})" if r.detail else ""
            out.append(f"/{r.endpoint}: {r.status}{suffix}")
        return out


class HttpTransport:
    """requests-backed transport for a live service."""

    def __init__(self, base_url: str, timeout_s: float = 120.0) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s

    def get(self, path: str):
        return requests.get(f"{self.base_url}{path}", timeout=self.timeout_s)

    def post(self, path: str, json: dict):
        return requests.post(f"{self.base_url}{path}", json=json, timeout=self.timeout_s)


def _check_one(transport, endpoint: str) -> EndpointResult:
    payload = CANNED_REQUESTS[endpoint]
    response = transport.post(f"/{endpoint}", json=payload)
    if response.status_code == 404:
        return EndpointResult(endpoint, "disabled")
    if response.status_code != 200:
        return EndpointResult(endpoint, "failed", f"HTTP {response.status_code}")
    body = response.json()
    try:
        jsonschema.validate(body, wire_schema(f"{endpoint}_response"))
    except jsonschema.ValidationError as exc:
        return EndpointResult(endpoint, "failed", f"schema: {exc.message}")
    problem = _semantic(endpoint, payload, body)
    if problem:
        return EndpointResult(endpoint, "failed", problem)
    return EndpointResult(endpoint, "ok")


def _semantic(endpoint: str, payload: dict, body: dict) -> str | None:
    if endpoint == "ner":
        previous_end = -1
        for span in body["entities"]:
            if not 0 <= span["start"] < span["end"] <= len(payload["text"]):
                return "span out of bounds"
            if span["start"] < previous_end:
                return "overlapping or unsorted spans"
            previous_end = span["end"]
    if endpoint == "nli":
        scores = body["entailment"]
        if len(scores) != len(payload["hypotheses"]):
            return "arity mismatch"
        if any(not 0.0 <= s <= 1.0 for s in scores):
            return "score outside [0, 1]"
    if endpoint == "embed":
        vectors = body["vectors"]
        if len(vectors) != len(payload["texts"]):
            return "arity mismatch"
        if len({len(v) for v in vectors}) > 1:
            return "mixed dimensions"
        for vec in vectors:
            if abs(sum(x * x for x in vec) ** 0.5 - 1.0) > 1e-6:
                return "non-unit norm"
    if endpoint == "chat" and not isinstance(body["content"], str):
        return "content is not a string"
    return None


def run_selfcheck(transport, config_endpoints: list[str] | None = None) -> SelfcheckReport:
    """Probe /health then every endpoint; disabled ones are noted, not failed."""
    report = SelfcheckReport()
    health = transport.get("/health")
    if health.status_code != 200:
        report.results.append(
            EndpointResult("health", "failed", f"HTTP {health.status_code}")
        )
        return report
    try:
        jsonschema.validate(health.json(), wire_schema("health_response"))
        report.results.append(EndpointResult("health", "ok"))
    except jsonschema.ValidationError as exc:
        report.results.append(EndpointResult("health", "failed", f"schema: {exc.message}"))
        return report
    for endpoint in ENDPOINTS:
        if config_endpoints is not None and endpoint not in config_endpoints:
            report.results.append(EndpointResult(endpoint, "disabled"))
            continue
        report.results.append(_check_one(transport, endpoint))
    return report
