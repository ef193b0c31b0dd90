"""Indexed relational store over a line-delimited page corpus.

A single-file SQLite database keyed on the canonical title with an alias
side-table gives millisecond lookup of pages, aliases, links, and attributes
without external services. Ingestion is single-writer; reads are safe from
multiple threads once ingestion has finished.
"""

from __future__ import annotations

import json
import logging
import sqlite3
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import PageNotFoundError, StoreError
from .textutil import canonical_key

logger = logging.getLogger(__name__)

_SCHEMA = """
CREATE TABLE IF NOT EXISTS pages (
    page_id INTEGER PRIMARY KEY,
    title TEXT NOT NULL,
    canon TEXT NOT NULL UNIQUE,
    aliases_json TEXT NOT NULL DEFAULT '[]'
);
CREATE TABLE IF NOT EXISTS aliases (
    canon TEXT NOT NULL,
    page_id INTEGER NOT NULL REFERENCES pages(page_id),
    PRIMARY KEY (canon, page_id)
);
CREATE INDEX IF NOT EXISTS idx_aliases_canon ON aliases(canon);
CREATE TABLE IF NOT EXISTS paragraphs (
    page_id INTEGER NOT NULL REFERENCES pages(page_id),
    idx INTEGER NOT NULL,
    section TEXT NOT NULL,
    text TEXT NOT NULL,
    PRIMARY KEY (page_id, idx)
);
CREATE TABLE IF NOT EXISTS links (
    page_id INTEGER NOT NULL REFERENCES pages(page_id),
    ord INTEGER NOT NULL,
    anchor TEXT NOT NULL,
    target TEXT NOT NULL,
    paragraph_index INTEGER NOT NULL,
    PRIMARY KEY (page_id, ord)
);
CREATE TABLE IF NOT EXISTS attributes (
    page_id INTEGER NOT NULL REFERENCES pages(page_id),
    key TEXT NOT NULL,
    value TEXT NOT NULL,
    PRIMARY KEY (page_id, key)
);
"""


@dataclass(frozen=True)
class Paragraph:
    index: int
    section: str
    text: str


@dataclass(frozen=True)
class Outlink:
    anchor_text: str
    target_title: str
    paragraph_index: int
    dangling: bool = False


@dataclass
class PageRecord:
    page_id: int
    title: str
    aliases: frozenset[str]
    paragraphs: list[Paragraph]
    outlinks: list[Outlink]
    attributes: dict[str, str]

    def surface_forms(self) -> list[str]:
        return [self.title, *sorted(self.aliases)]


@dataclass(frozen=True)
class IngestError:
    line: int
    message: str


@dataclass
class IngestResult:
    count: int = 0
    errors: list[IngestError] = field(default_factory=list)


def _parse_page_document(raw: str) -> dict:
    """Validate one corpus line against the page document schema.

    Expected shape: {"title": str, "aliases": [str], "sections":
    [{"name": str, "paragraphs": [str]}], "links": [{"anchor": str,
    "target": str, "paragraph": int}], "attributes": {str: str}}.
    Raises ValueError with a human-readable reason on any violation.
    """
    doc = json.loads(raw)
    if not isinstance(doc, dict):
        raise ValueError("page document must be a JSON object")
    title = doc.get("title")
    if not isinstance(title, str) or not title.strip():
        raise ValueError("missing or empty title")
    aliases = doc.get("aliases", [])
    if not isinstance(aliases, list) or any(not isinstance(a, str) for a in aliases):
        raise ValueError("aliases must be a list of strings")
    sections = doc.get("sections", [])
    if not isinstance(sections, list):
        raise ValueError("sections must be a list")
    paragraphs: list[tuple[str, str]] = []
    for section in sections:
        if not isinstance(section, dict) or not isinstance(section.get("name"), str):
            raise ValueError("each section needs a string name")
        texts = section.get("paragraphs", [])
        if not isinstance(texts, list):
            raise ValueError(f"section {section['name']!r} paragraphs must be a list")
        for text in texts:
            if not isinstance(text, str) or not text.strip():
                raise ValueError(f"empty paragraph in section {section['name']!r}")
            paragraphs.append((section["name"], text))
    links = doc.get("links", [])
    if not isinstance(links, list):
        raise ValueError("links must be a list")
    for link in links:
        if not isinstance(link, dict):
            raise ValueError("each link must be an object")
        if not isinstance(link.get("anchor"), str) or not link["anchor"].strip():
            raise ValueError("link anchor must be a non-empty string")
        if not isinstance(link.get("target"), str) or not link["target"].strip():
            raise ValueError("link target must be a non-empty string")
        index = link.get("paragraph")
        if not isinstance(index, int) or isinstance(index, bool):
            raise ValueError("link paragraph must be an integer")
        if not 0 <= index < len(paragraphs):
            raise ValueError(f"link paragraph {index} outside 0..{len(paragraphs) - 1}")
    attributes = doc.get("attributes", {})
    if not isinstance(attributes, dict) or any(
        not isinstance(k, str) or not isinstance(v, str) for k, v in attributes.items()
    ):
        raise ValueError("attributes must map strings to strings")
    return {
        "title": title.strip(),
        # empty or whitespace-only aliases are dropped: a PageRecord never
        # carries the empty alias
        "aliases": sorted({a.strip() for a in aliases if a.strip()}),
        "paragraphs": paragraphs,
        "links": [(l["anchor"].strip(), l["target"].strip(), l["paragraph"]) for l in links],
        "attributes": dict(attributes),
    }


class CorpusStore:
    """Canonical-title-keyed page store backed by a single SQLite file."""

    def __init__(self, path: str | Path = ":memory:") -> None:
        self.path = str(path)
        if self.path != ":memory:":
            Path(self.path).parent.mkdir(parents=True, exist_ok=True)
        try:
            self._conn = sqlite3.connect(self.path, check_same_thread=False)
        except sqlite3.Error as exc:
            raise StoreError(f"cannot open store at {self.path}: {exc}") from exc
        self._conn.row_factory = sqlite3.Row
        self._lock = threading.RLock()
        with self._lock:
            self._conn.executescript(_SCHEMA)
            self._conn.commit()

    def close(self) -> None:
        self._conn.close()

    # -- ingestion ----------------------------------------------------

    def ingest_corpus(self, stream: Iterable[str]) -> IngestResult:
        """Load line-delimited page documents; returns count plus per-line errors.

        Malformed lines are reported with their 1-based line number and
        skipped. A duplicate title with identical content is a no-op counted
        as ingested (re-ingesting the same stream is idempotent); a duplicate
        title with different content is rejected.
        """
        result = IngestResult()
        with self._lock:
            for line_no, raw in enumerate(stream, start=1):
                if not raw.strip():
                    continue
                try:
                    doc = _parse_page_document(raw)
                except (ValueError, json.JSONDecodeError) as exc:
                    result.errors.append(IngestError(line_no, str(exc)))
                    logger.warning("line %d rejected: %s", line_no, exc)
                    continue
                canon = canonical_key(doc["title"])
                existing = self._conn.execute(
                    "SELECT page_id FROM pages WHERE canon = ?", (canon,)
                ).fetchone()
                if existing is not None:
                    if self._stored_doc(existing["page_id"]) == doc:
                        result.count += 1
                        continue
                    result.errors.append(
                        IngestError(line_no, f"duplicate title {doc['title']!r} with different content")
                    )
                    logger.warning("line %d rejected: duplicate title %r", line_no, doc["title"])
                    continue
                self._insert(canon, doc)
                result.count += 1
            self._conn.commit()
        return result

    def _insert(self, canon: str, doc: dict) -> None:
        cur = self._conn.execute(
            "INSERT INTO pages(title, canon, aliases_json) VALUES (?, ?, ?)",
            (doc["title"], canon, json.dumps(doc["aliases"], ensure_ascii=False)),
        )
        page_id = cur.lastrowid
        rows = {canonical_key(a) for a in doc["aliases"] if canonical_key(a)}
        rows.add(canon)
        self._conn.executemany(
            "INSERT OR IGNORE INTO aliases(canon, page_id) VALUES (?, ?)",
            [(a, page_id) for a in sorted(rows)],
        )
        self._conn.executemany(
            "INSERT INTO paragraphs(page_id, idx, section, text) VALUES (?, ?, ?, ?)",
            [(page_id, i, section, text) for i, (section, text) in enumerate(doc["paragraphs"])],
        )
        self._conn.executemany(
            "INSERT INTO links(page_id, ord, anchor, target, paragraph_index) VALUES (?, ?, ?, ?, ?)",
            [(page_id, i, a, t, p) for i, (a, t, p) in enumerate(doc["links"])],
        )
        self._conn.executemany(
            "INSERT INTO attributes(page_id, key, value) VALUES (?, ?, ?)",
            [(page_id, k, v) for k, v in sorted(doc["attributes"].items())],
        )

    def _stored_doc(self, page_id: int) -> dict:
        """Reassemble the normalized document for idempotency comparison."""
        record = self._fetch_record(page_id)
        return {
            "title": record.title,
            "aliases": sorted(record.aliases),
            "paragraphs": [(p.section, p.text) for p in record.paragraphs],
            "links": [(o.anchor_text, o.target_title, o.paragraph_index) for o in record.outlinks],
            "attributes": dict(record.attributes),
        }

    # -- lookup -------------------------------------------------------

    def resolve_alias(self, name: str) -> str:
        """Canonical title for a name; identity on canonical titles."""
        canon = canonical_key(name)
        if not canon:
            raise PageNotFoundError("empty name")
        with self._lock:
            row = self._conn.execute("SELECT title FROM pages WHERE canon = ?", (canon,)).fetchone()
            if row is not None:
                return row["title"]
            row = self._conn.execute(
                "SELECT p.title FROM aliases a JOIN pages p ON p.page_id = a.page_id "
                "WHERE a.canon = ? ORDER BY a.page_id LIMIT 1",
                (canon,),
            ).fetchone()
        if row is None:
            raise PageNotFoundError(f"no page for {name!r}")
        return row["title"]

    def get_page(self, title: str) -> PageRecord:
        """Record whose title or alias matches after canonicalization."""
        canon = canonical_key(title)
        with self._lock:
            row = self._conn.execute(
                "SELECT page_id FROM pages WHERE canon = ? "
                "UNION SELECT page_id FROM aliases WHERE canon = ? ORDER BY page_id LIMIT 1",
                (canon, canon),
            ).fetchone()
            if row is None:
                raise PageNotFoundError(f"no page for {title!r}")
            return self._fetch_record(row["page_id"])

    def has_page(self, title: str) -> bool:
        try:
            self.resolve_alias(title)
            return True
        except PageNotFoundError:
            return False

    def page_count(self) -> int:
        with self._lock:
            return self._conn.execute("SELECT COUNT(*) AS n FROM pages").fetchone()["n"]

    def iter_titles(self) -> list[str]:
        with self._lock:
            rows = self._conn.execute("SELECT title FROM pages ORDER BY page_id").fetchall()
        return [r["title"] for r in rows]

    def _fetch_record(self, page_id: int) -> PageRecord:
        page = self._conn.execute(
            "SELECT page_id, title, aliases_json FROM pages WHERE page_id = ?", (page_id,)
        ).fetchone()
        if page is None:
            raise PageNotFoundError(f"no page id {page_id}")
        aliases = json.loads(page["aliases_json"])
        paragraphs = [
            Paragraph(index=r["idx"], section=r["section"], text=r["text"])
            for r in self._conn.execute(
                "SELECT idx, section, text FROM paragraphs WHERE page_id = ? ORDER BY idx", (page_id,)
            )
        ]
        attributes = {
            r["key"]: r["value"]
            for r in self._conn.execute(
                "SELECT key, value FROM attributes WHERE page_id = ? ORDER BY key", (page_id,)
            )
        }
        outlinks = []
        for r in self._conn.execute(
            "SELECT anchor, target, paragraph_index FROM links WHERE page_id = ? ORDER BY ord",
            (page_id,),
        ):
            target_canon = canonical_key(r["target"])
            known = self._conn.execute(
                "SELECT 1 FROM pages WHERE canon = ? UNION SELECT 1 FROM aliases WHERE canon = ? LIMIT 1",
                (target_canon, target_canon),
            ).fetchone()
            outlinks.append(
                Outlink(
                    anchor_text=r["anchor"],
                    target_title=r["target"],
                    paragraph_index=r["paragraph_index"],
                    dangling=known is None,
                )
            )
        return PageRecord(
            page_id=page["page_id"],
            title=page["title"],
            aliases=frozenset(aliases),
            paragraphs=paragraphs,
            outlinks=outlinks,
            attributes=attributes,
        )
