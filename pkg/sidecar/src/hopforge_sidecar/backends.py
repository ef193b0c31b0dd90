"""Model backends for the four wire-protocol endpoints.

``hash`` backends are deterministic and dependency-free, for offline
protocol testing. Transformers-backed implementations load real checkpoints
and collapse model-specific tags into the four labels the pipeline expects.
"""

from __future__ import annotations

import hashlib
import re

import requests

from hopforge.gateway import deterministic_unit_vector

# model-specific NER tags collapsed into the wire-protocol label set
NER_LABEL_MAP = {
    "PER": "person",
    "PERSON": "person",
    "LOC": "location",
    "LOCATION": "location",
    "GPE": "location",
    "ORG": "organization",
    "ORGANIZATION": "organization",
    "MISC": "event_misc",
    "EVENT": "event_misc",
}

_CAPITALIZED_RUN = re.compile(r"\b[A-Z][\w]*(?:\s+[A-Z][\w]*)*\b")
_TOKEN_RE = re.compile(r"\w+")


def map_ner_label(tag: str) -> str | None:
    """Collapse a model tag (with optional B-/I- prefix) or drop it."""
    cleaned = tag.split("-")[-1].upper()
    return NER_LABEL_MAP.get(cleaned)


def _stable_fraction(text: str) -> float:
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:4], "big") / 0xFFFFFFFF


class HashNer:
    """Labels every capitalized run, deterministically."""

    labels = ("person", "location", "organization", "event_misc")

    def ner(self, text: str) -> list[dict]:
        entities = []
        for match in _CAPITALIZED_RUN.finditer(text):
            surface = match.group(0)
            fraction = _stable_fraction(surface)
            entities.append(
                {
                    "start": match.start(),
                    "end": match.end(),
                    "label": self.labels[int(fraction * 4) % 4],
                    "score": round(0.6 + 0.39 * fraction, 4),
                }
            )
        return entities


class HashNli:
    """Lexical-overlap entailment stand-in, bounded to [0, 1]."""

    def nli(self, premise: str, hypotheses: list[str]) -> list[float]:
        premise_tokens = {t.casefold() for t in _TOKEN_RE.findall(premise)}
        scores = []
        for hypothesis in hypotheses:
            tokens = [t.casefold() for t in _TOKEN_RE.findall(hypothesis)]
            if not tokens:
                scores.append(0.0)
                continue
            overlap = sum(1 for t in tokens if t in premise_tokens) / len(tokens)
            jitter = 0.05 * _stable_fraction(premise + "\x00" + hypothesis)
            scores.append(round(min(1.0, 0.9 * overlap + jitter), 6))
        return scores


class HashEmbed:
    def __init__(self, dim: int = 16) -> None:
        self.dim = dim

    def embed(self, texts: list[str]) -> list[list[float]]:
        return [deterministic_unit_vector(t, self.dim) for t in texts]


class HashChat:
    """Deterministic digest reply; useful only for protocol tests."""

    def chat(self, messages: list[dict], schema: dict | None) -> str:
        last = messages[-1].get("content", "")
        digest = hashlib.sha256(last.encode()).hexdigest()[:12]
        return f"hash-chat:{digest}"


class EchoChat:
    def chat(self, messages: list[dict], schema: dict | None) -> str:
        return messages[-1].get("content", "")


class ProxyChat:
    """Forwards /chat bodies to another wire-protocol service."""

    def __init__(self, base_url: str, timeout_s: float = 60.0) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s

    def chat(self, messages: list[dict], schema: dict | None) -> str:
        response = requests.post(
            f"{self.base_url}/chat",
            json={"messages": messages, "schema": schema},
            timeout=self.timeout_s,
        )
        response.raise_for_status()
        return response.json()["content"]


class TransformersNer:
    def __init__(self, model_id: str, device: str = "cpu") -> None:
        from transformers import pipeline

        self._pipe = pipeline(
            "token-classification",
            model=model_id,
            aggregation_strategy="simple",
            device=-1 if device == "cpu" else device,
        )

    def ner(self, text: str) -> list[dict]:
        raw = self._pipe(text)
        spans = []
        for item in raw:
            label = map_ner_label(str(item.get("entity_group", item.get("entity", ""))))
            if label is None:
                continue
            start, end = int(item["start"]), int(item["end"])
            if not 0 <= start < end <= len(text):
                continue
            spans.append({"start": start, "end": end, "label": label, "score": float(item["score"])})
        spans.sort(key=lambda s: (s["start"], -(s["end"] - s["start"])))
        kept: list[dict] = []
        for span in spans:
            if kept and span["start"] < kept[-1]["end"]:
                continue
            kept.append(span)
        return kept


class TransformersNli:
    """Entailment probability = softmax probability of the entailment class."""

    def __init__(self, model_id: str, device: str = "cpu") -> None:
        import torch
        from transformers import AutoModelForSequenceClassification, AutoTokenizer

        self._torch = torch
        self._tokenizer = AutoTokenizer.from_pretrained(model_id)
        self._model = AutoModelForSequenceClassification.from_pretrained(model_id)
        self._model.eval()
        label2id = {k.lower(): v for k, v in self._model.config.label2id.items()}
        entail = [v for k, v in label2id.items() if "entail" in k]
        if not entail:
            raise RuntimeError(f"model {model_id} has no entailment label: {label2id}")
        self._entail_index = entail[0]

    def nli(self, premise: str, hypotheses: list[str]) -> list[float]:
        torch = self._torch
        scores = []
        with torch.no_grad():
            for i in range(0, len(hypotheses), 16):
                batch = hypotheses[i : i + 16]
                encoded = self._tokenizer(
                    [premise] * len(batch),
                    batch,
                    truncation=True,
                    padding=True,
                    return_tensors="pt",
                )
                logits = self._model(**encoded).logits
                probs = torch.softmax(logits, dim=-1)[:, self._entail_index]
                scores.extend(float(p) for p in probs)
        return scores


class TransformersEmbed:
    def __init__(self, model_id: str, device: str = "cpu") -> None:
        from sentence_transformers import SentenceTransformer

        self._model = SentenceTransformer(model_id, device=device)

    def embed(self, texts: list[str]) -> list[list[float]]:
        vectors = self._model.encode(texts, normalize_embeddings=True)
        return [[float(x) for x in v] for v in vectors]


class TransformersChat:
    def __init__(self, model_id: str, device: str = "cpu", max_new_tokens: int = 256) -> None:
        from transformers import pipeline

        self._pipe = pipeline(
            "text-generation", model=model_id, device=-1 if device == "cpu" else device
        )
        self.max_new_tokens = max_new_tokens

    def chat(self, messages: list[dict], schema: dict | None) -> str:
        prompt = "\n".join(f"{m['role']}: {m['content']}" for m in messages) + "\nassistant:"
        out = self._pipe(prompt, max_new_tokens=self.max_new_tokens, do_sample=False)
        text = out[0]["generated_text"]
        return text[len(prompt) :].strip()


def build_backend(endpoint: str, model_id: str, device: str, embed_dim: int):
    if model_id == "hash":
        return {
            "ner": HashNer,
            "nli": HashNli,
            "embed": lambda: HashEmbed(embed_dim),
            "chat": HashChat,
        }[endpoint]()
    if endpoint == "chat":
        if model_id == "echo":
            return EchoChat()
        if model_id.startswith("proxy:"):
            return ProxyChat(model_id[len("proxy:") :])
        return TransformersChat(model_id, device)
    if endpoint == "ner":
        return TransformersNer(model_id, device)
    if endpoint == "nli":
        return TransformersNli(model_id, device)
    if endpoint == "embed":
        return TransformersEmbed(model_id, device)
    raise ValueError(f"unknown endpoint {endpoint!r}")


def build_backends(config) -> dict[str, object]:
    """Instantiate every enabled endpoint; any load failure aborts startup."""
    backends = {}
    for endpoint, model_id in config.models.items():
        if not model_id:
            continue
        try:
            backends[endpoint] = build_backend(endpoint, model_id, config.device, config.embed_dim)
        except Exception as exc:
            raise RuntimeError(f"failed to load {endpoint} model {model_id!r}: {exc}") from exc
    return backends
