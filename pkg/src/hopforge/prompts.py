"""Chat prompt builders and their response contracts.

Prompt wording lives in the versioned template files under
``hopforge/templates``; this module fixes the contracts: which inputs each
prompt takes and the JSON shape the model must return. The first line of
every prompt is a stable ``TASK:`` marker so scripted mocks can match calls
without depending on wording.
"""

from __future__ import annotations

import json
from importlib import resources

PROMPT_VERSION = 1

_SYSTEM = {
    "role": "system",
    "content": "You are a careful dataset construction assistant. "
    "Always answer with a single JSON object exactly matching the requested keys.",
}


def _template(name: str) -> str:
    return resources.files("hopforge.templates").joinpath(f"{name}.txt").read_text("utf-8")


def _messages(template: str, **fields: object) -> list[dict[str, str]]:
    return [dict(_SYSTEM), {"role": "user", "content": _template(template).format(**fields)}]


COREF_SCHEMA = {
    "type": "object",
    "properties": {"text": {"type": "string", "minLength": 1}},
    "required": ["text"],
}

CLUE_SCHEMA = {
    "type": "object",
    "properties": {
        "clue": {"type": "string", "minLength": 1},
        "used_attributes": {"type": "array", "items": {"type": "string"}},
    },
    "required": ["clue"],
}

QUESTION_SCHEMA = {
    "type": "object",
    "properties": {"question": {"type": "string", "minLength": 1}},
    "required": ["question"],
}

ANSWER_SCHEMA = {
    "type": "object",
    "properties": {"answer": {"type": "string"}},
    "required": ["answer"],
}

STRUCTURE_SCHEMA = {
    "type": "object",
    "properties": {
        "nodes": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "label": {"type": "string"},
                    "kind": {"type": "string", "enum": ["subject", "object", "attribute"]},
                },
                "required": ["id", "label", "kind"],
            },
        },
        "edges": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "from": {"type": "string"},
                    "to": {"type": "string"},
                    "relation": {
                        "type": "string",
                        "enum": ["is_a", "part_of", "has_attribute", "causes", "requires", "used_for"],
                    },
                },
                "required": ["from", "to", "relation"],
            },
        },
    },
    "required": ["nodes", "edges"],
}

PREDICATES_SCHEMA = {
    "type": "object",
    "properties": {
        "predicates": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "field": {"type": "string", "minLength": 1},
                    "operator": {"type": "string", "enum": ["equals", "within", "contains", "category"]},
                    "value": {"type": "string"},
                    "source_span": {
                        "type": "array",
                        "items": {"type": "integer", "minimum": 0},
                        "minItems": 2,
                        "maxItems": 2,
                    },
                    "confidence": {"type": "number", "minimum": 0, "maximum": 1},
                },
                "required": ["field", "operator", "value", "source_span", "confidence"],
            },
        }
    },
    "required": ["predicates"],
}

VERDICT_SCHEMA = {
    "type": "object",
    "properties": {
        "verdict": {"type": "string", "enum": ["Y", "P", "U", "N"]},
        "evidence_ref": {"type": "string"},
        "justification": {"type": "string"},
    },
    "required": ["verdict", "evidence_ref", "justification"],
}


def coref_messages(paragraph: str, subject: str) -> list[dict[str, str]]:
    return _messages("coref", subject=subject, paragraph=paragraph)


def clue_messages(
    entity: str,
    depth: int,
    relation: str,
    direction: str,
    evidence: str,
    attributes: dict[str, str],
    banned: list[str],
    attempt: int,
) -> list[dict[str, str]]:
    attr_lines = "\n".join(f"- {k}: {v}" for k, v in sorted(attributes.items())) or "(none)"
    return _messages(
        "clue",
        entity=entity,
        depth=depth,
        relation=relation,
        direction=direction,
        evidence=evidence,
        attributes=attr_lines,
        banned=json.dumps(banned, ensure_ascii=False),
        attempt=attempt,
    )


def compose_messages(
    target: str, clues: list[str], banned: list[str], max_words: int, attempt: int
) -> list[dict[str, str]]:
    clue_lines = "\n".join(f"{i + 1}. {c}" for i, c in enumerate(clues))
    return _messages(
        "compose",
        target=target,
        clues=clue_lines,
        banned=json.dumps(banned, ensure_ascii=False),
        max_words=max_words,
        attempt=attempt,
    )


def obfuscate_messages(
    question: str, banned: list[str], max_words: int, attempt: int
) -> list[dict[str, str]]:
    return _messages(
        "obfuscate",
        question=question,
        banned=json.dumps(banned, ensure_ascii=False),
        max_words=max_words,
        attempt=attempt,
    )


def probe_messages(question: str, round_no: int, run: int, runs: int) -> list[dict[str, str]]:
    return _messages("probe", question=question, round=round_no, run=run, runs=runs)


def vote_messages(question: str, run: int, runs: int) -> list[dict[str, str]]:
    return _messages("vote", question=question, run=run, runs=runs)


def harden_messages(
    question: str,
    subgraph: str,
    soft_targets: list[str],
    banned: list[str],
    max_words: int,
    attempt: int,
) -> list[dict[str, str]]:
    return _messages(
        "harden",
        question=question,
        subgraph=subgraph,
        soft_targets=json.dumps(soft_targets, ensure_ascii=False),
        banned=json.dumps(banned, ensure_ascii=False),
        max_words=max_words,
        attempt=attempt,
    )


def structure_messages(question: str, attempt: int) -> list[dict[str, str]]:
    return _messages("structure", question=question, attempt=attempt)


def decompose_messages(question: str, attempt: int) -> list[dict[str, str]]:
    return _messages("decompose", question=question, attempt=attempt)


def verdict_messages(
    candidate: str, predicate: str, evidence: list[str], attempt: int
) -> list[dict[str, str]]:
    evidence_lines = "\n".join(f"[{i + 1}] {p}" for i, p in enumerate(evidence)) or "(none)"
    return _messages(
        "verdict", candidate=candidate, predicate=predicate, evidence=evidence_lines, attempt=attempt
    )
