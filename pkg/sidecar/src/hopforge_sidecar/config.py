"""Service configuration: which model serves each endpoint, and where."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

# identifiers with this prefix select the deterministic offline backend
HASH_BACKEND = "hash"

DEFAULT_MODELS = {
    "ner": "dslim/bert-large-NER",
    "nli": "facebook/bart-large-mnli",
    "embed": "BAAI/bge-m3",
    "chat": "echo",
}

ENDPOINTS = ("ner", "nli", "embed", "chat")


@dataclass
class ServiceConfig:
    """Model identifier per endpoint; None disables that endpoint.

    Identifiers: ``hash`` selects the deterministic offline backend, ``echo``
    (chat only) answers with a digest of the prompt, ``proxy:<url>`` (chat
    only) forwards to another wire-protocol service, anything else is loaded
    through transformers.
    """

    models: dict[str, str | None] = field(default_factory=lambda: dict(DEFAULT_MODELS))
    device: str = "cpu"
    port: int = 8400
    max_concurrent: int = 4
    embed_dim: int = 16  # hash backend only

    def __post_init__(self) -> None:
        unknown = set(self.models) - set(ENDPOINTS)
        if unknown:
            raise ValueError(f"unknown endpoints in config: {sorted(unknown)}")
        for endpoint in ENDPOINTS:
            self.models.setdefault(endpoint, None)
        if not 0 < self.port < 65536:
            raise ValueError(f"invalid port {self.port}")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")

    def enabled(self) -> list[str]:
        return [e for e in ENDPOINTS if self.models.get(e)]

    @classmethod
    def from_file(cls, path: str | Path) -> "ServiceConfig":
        obj = json.loads(Path(path).read_text("utf-8"))
        return cls(**obj)

    @classmethod
    def offline(cls, embed_dim: int = 16) -> "ServiceConfig":
        """All four endpoints on the deterministic hash backend."""
        return cls(
            models={"ner": "hash", "nli": "hash", "embed": "hash", "chat": "hash"},
            embed_dim=embed_dim,
        )
