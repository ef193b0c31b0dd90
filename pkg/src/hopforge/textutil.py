"""Deterministic text helpers: canonicalization, sentence split, similarity.

Everything here is pure and offline so that pipeline runs are reproducible
byte for byte.
"""

from __future__ import annotations

import re

_WHITESPACE_RE = re.compile(r"\s+")
_SURROUNDING_PUNCT = ".,;:!?\"'()[]{}«»“”‘’"
_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")
_YEAR_RE = re.compile(r"\b(1[0-9]{3}|20[0-9]{2})\b")
_CITATION_RE = re.compile(r"\[(?:\d+|[a-z]|citation needed|note \d+)\]", re.IGNORECASE)


def canonical_key(name: str) -> str:
    """Case-folded, whitespace-collapsed, punctuation-trimmed lookup key."""
    collapsed = _WHITESPACE_RE.sub(" ", name).strip()
    return collapsed.strip(_SURROUNDING_PUNCT).strip().casefold()


def collapse_whitespace(text: str) -> str:
    return _WHITESPACE_RE.sub(" ", text).strip()


def strip_markup(text: str) -> str:
    """Drop citation markers and collapse whitespace."""
    return collapse_whitespace(_CITATION_RE.sub("", text))


def split_sentences(text: str) -> list[str]:
    """Naive but deterministic sentence segmentation."""
    return [s for s in (_s.strip() for _s in _SENTENCE_RE.split(text)) if s]


def _term_pattern(term: str) -> re.Pattern | None:
    words = term.split()
    if not words:
        return None
    body = r"\s+".join(re.escape(w) for w in words)
    return re.compile(rf"\b{body}\b", re.IGNORECASE)


def find_term(text: str, term: str) -> int:
    """Start offset of the first whole-word, case-insensitive occurrence, or -1.

    Word boundaries matter: the alias "ANA" must not match inside
    "Kanazawa".
    """
    pattern = _term_pattern(term)
    if pattern is None:
        return -1
    match = pattern.search(text)
    return match.start() if match else -1


def contains_term(text: str, term: str) -> bool:
    return find_term(text, term) >= 0


def character_trigrams(text: str) -> set[str]:
    key = canonical_key(text)
    if len(key) < 3:
        return {key} if key else set()
    return {key[i : i + 3] for i in range(len(key) - 2)}


def trigram_similarity(a: str, b: str) -> float:
    """Jaccard overlap of character trigrams of the canonicalized strings."""
    ta, tb = character_trigrams(a), character_trigrams(b)
    if not ta and not tb:
        return 1.0
    union = ta | tb
    if not union:
        return 0.0
    return len(ta & tb) / len(union)


def word_count(text: str) -> int:
    return len(text.split())


def find_years(text: str) -> list[tuple[int, int, int]]:
    """All 4-digit years with their character spans, as (year, start, end)."""
    return [(int(m.group(1)), m.start(1), m.end(1)) for m in _YEAR_RE.finditer(text)]


def year_to_era(year: int) -> str:
    """Generalize an exact year into an era phrase ("2003" -> early 21st century)."""
    century = year // 100 + 1
    offset = year % 100
    if offset < 33:
        part = "early"
    elif offset < 66:
        part = "mid"
    else:
        part = "late"
    return f"the {part} {_ordinal(century)} century"


def _ordinal(n: int) -> str:
    if 10 <= n % 100 <= 20:
        suffix = "th"
    else:
        suffix = {1: "st", 2: "nd", 3: "rd"}.get(n % 10, "th")
    return f"{n}{suffix}"
