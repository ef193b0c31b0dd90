"""Candidate-entity neighborhood construction around a seed page.

Pipeline per page: drop boilerplate sections, strip markup, run NER over
each surviving anchor in its sentence context, keep only anchors labeled as
concrete entities, and attach the originating paragraph as evidence with a
guaranteed seed co-occurrence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

from .errors import CooccurrenceError, EmptyDocumentError, GatewayError, SchemaViolationError
from .gateway import ModelGateway
from .prompts import coref_messages, COREF_SCHEMA
from .store import CorpusStore, Outlink, PageRecord, Paragraph
from .textutil import canonical_key, contains_term, find_term, split_sentences, strip_markup

logger = logging.getLogger(__name__)

# Boilerplate sections whose links are citations, not evidence.
SECTION_DROP_LIST = frozenset(
    {"see also", "references", "external links", "further reading", "notes", "bibliography"}
)

# Labels that survive entity filtering; anything else is treated as an
# abstract concept or meta-page and rejected.
ACCEPTED_LABELS = frozenset({"person", "location", "organization", "event_misc"})

DEFAULT_NER_THRESHOLD = 0.5


@dataclass
class CleanDocument:
    """Paragraphs and outlinks that survive preprocessing; indices are preserved."""

    title: str
    paragraphs: list[Paragraph]
    outlinks: list[Outlink]

    def paragraph_by_index(self, index: int) -> Paragraph | None:
        for paragraph in self.paragraphs:
            if paragraph.index == index:
                return paragraph
        return None

    def paragraph_texts(self) -> list[str]:
        return [p.text for p in self.paragraphs]


@dataclass
class EvidenceParagraph:
    source_title: str
    paragraph_index: int
    text: str


@dataclass
class CandidateEntity:
    title: str
    entity_label: str
    ner_score: float
    mention_frequency: int
    evidence: EvidenceParagraph
    anchor_text: str


class NodeBuilder:
    """Builds filtered, evidence-backed candidate sets for one page at a time."""

    def __init__(
        self,
        store: CorpusStore,
        gateway: ModelGateway,
        ner_threshold: float = DEFAULT_NER_THRESHOLD,
        coref_enabled: bool = False,
        coref_retries: int = 1,
    ) -> None:
        self.store = store
        self.gateway = gateway
        self.ner_threshold = ner_threshold
        self.coref_enabled = coref_enabled
        self.coref_retries = coref_retries

    # -- preprocessing ------------------------------------------------

    def preprocess(self, page: PageRecord) -> CleanDocument:
        """Drop boilerplate sections and markup; prune links from dropped paragraphs."""
        kept: list[Paragraph] = []
        kept_indices: set[int] = set()
        for paragraph in page.paragraphs:
            if canonical_key(paragraph.section) in SECTION_DROP_LIST:
                continue
            text = strip_markup(paragraph.text)
            if not text:
                continue
            kept.append(Paragraph(index=paragraph.index, section=paragraph.section, text=text))
            kept_indices.add(paragraph.index)
        if not kept:
            raise EmptyDocumentError(f"nothing left of {page.title!r} after preprocessing")
        outlinks = [o for o in page.outlinks if o.paragraph_index in kept_indices]
        return CleanDocument(title=page.title, paragraphs=kept, outlinks=outlinks)

    # -- candidate extraction -----------------------------------------

    def extract_and_filter_candidates(
        self, doc: CleanDocument, seed: PageRecord
    ) -> list[CandidateEntity]:
        """One candidate per distinct surviving link that NER accepts in context.

        Self-links and dangling links are rejected. Multiple links to one
        target merge into a single candidate with summed mention frequency;
        the first occurrence (paragraph order, then link order) supplies the
        NER context and the evidence paragraph.
        """
        seed_canon = canonical_key(seed.title)
        grouped: dict[str, list[Outlink]] = {}
        order: list[str] = []
        for _, link in sorted(enumerate(doc.outlinks), key=lambda t: (t[1].paragraph_index, t[0])):
            target_canon = canonical_key(link.target_title)
            if link.dangling or target_canon == seed_canon:
                continue
            if target_canon not in grouped:
                grouped[target_canon] = []
                order.append(target_canon)
            grouped[target_canon].append(link)
        candidates: list[CandidateEntity] = []
        for target_canon in order:
            links = grouped[target_canon]
            first = links[0]
            accepted = self._label_anchor(doc, first)
            if accepted is None:
                continue
            label, score = accepted
            paragraph = doc.paragraph_by_index(first.paragraph_index)
            assert paragraph is not None
            candidates.append(
                CandidateEntity(
                    title=self.store.resolve_alias(first.target_title),
                    entity_label=label,
                    ner_score=score,
                    mention_frequency=len(links),
                    evidence=EvidenceParagraph(
                        source_title=seed.title,
                        paragraph_index=paragraph.index,
                        text=paragraph.text,
                    ),
                    anchor_text=first.anchor_text,
                )
            )
        return candidates

    def _label_anchor(self, doc: CleanDocument, link: Outlink) -> tuple[str, float] | None:
        """NER label and score for the anchor within its sentence, if accepted."""
        paragraph = doc.paragraph_by_index(link.paragraph_index)
        if paragraph is None:
            return None
        sentence, offset = _sentence_around(paragraph.text, link.anchor_text)
        if sentence is None:
            logger.debug("anchor %r not found in paragraph %d", link.anchor_text, link.paragraph_index)
            return None
        spans = self.gateway.ner(sentence)
        anchor_end = offset + len(link.anchor_text)
        for span in spans:
            if span.start < anchor_end and span.end > offset:
                if span.label in ACCEPTED_LABELS and span.score >= self.ner_threshold:
                    return span.label, span.score
                return None
        return None

    # -- evidence -----------------------------------------------------

    def associate_evidence(self, candidate: CandidateEntity, seed: PageRecord) -> EvidenceParagraph:
        """Originating paragraph, coreference-resolved when enabled.

        Raises CooccurrenceError when the paragraph never mentions the seed
        even after resolution; chat failure falls back to the raw paragraph.
        """
        evidence = candidate.evidence
        if self.coref_enabled:
            try:
                resolved = self.gateway.chat(
                    coref_messages(evidence.text, seed.title), COREF_SCHEMA
                )
                evidence = replace(evidence, text=resolved["text"])
            except (GatewayError, SchemaViolationError) as exc:
                logger.warning("coreference resolution failed, using raw paragraph: %s", exc)
        for form in seed.surface_forms():
            if contains_term(evidence.text, form):
                return evidence
        raise CooccurrenceError(f"no co-occurrence of {seed.title!r} in evidence for {candidate.title!r}")

    def build_candidates(self, page: PageRecord) -> list[CandidateEntity]:
        """Preprocess, filter, and evidence-check candidates for one page."""
        doc = self.preprocess(page)
        out = []
        for candidate in self.extract_and_filter_candidates(doc, page):
            try:
                evidence = self.associate_evidence(candidate, page)
            except CooccurrenceError as exc:
                logger.debug("candidate dropped: %s", exc)
                continue
            candidate.evidence = evidence
            out.append(candidate)
        return out

    # -- enrichment ---------------------------------------------------

    def enrich_entity(self, title: str) -> dict[str, str]:
        """Stored attribute map for a title; empty when none recorded."""
        return dict(self.store.get_page(title).attributes)


def _sentence_around(text: str, anchor: str) -> tuple[str | None, int]:
    """Sentence containing the first occurrence of the anchor, and the
    anchor's offset within that sentence."""
    pos = find_term(text, anchor)
    if pos < 0:
        return None, -1
    consumed = 0
    for sentence in split_sentences(text):
        start = text.index(sentence, consumed)
        end = start + len(sentence)
        if start <= pos < end:
            return sentence, pos - start
        consumed = end
    return text, pos
