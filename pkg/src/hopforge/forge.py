"""Reverse question construction, obfuscation, and the probe-and-rewrite loop.

Clues are generated leaf-first from the evidence graph, nested into a single
question that asks for the seed without naming it, then iteratively hardened:
while a majority of probe runs still finds the seed, the question is rewritten
against a minimal supporting subgraph with softened anchors.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Callable

from .errors import GatewayError, GenerationError, HardeningError, PageNotFoundError, SchemaViolationError
from .expand import EvidenceGraph
from .gateway import ModelGateway
from .prompts import (
    ANSWER_SCHEMA,
    CLUE_SCHEMA,
    QUESTION_SCHEMA,
    clue_messages,
    compose_messages,
    harden_messages,
    obfuscate_messages,
    probe_messages,
)
from .store import CorpusStore
from .textutil import contains_term, find_years, word_count, year_to_era

logger = logging.getLogger(__name__)

STATUS_DRAFT = "draft"
STATUS_PROBED = "probed"
STATUS_HARDENED = "hardened"
STATUS_ACCEPTED = "accepted"
STATUS_REJECTED = "rejected"

# Editable anchor-generalization phrases applied before the chat paraphrase;
# exact years are generalized separately via year_to_era.
DEFAULT_ANCHOR_PHRASES: tuple[tuple[str, str], ...] = (
    ("the U.S. Secretary of State", "a North American diplomatic authority"),
)

_MODEL_NUMBER_RE = re.compile(r"\b[A-Z][A-Za-z]*[ -]?\d{2,}\b")
_PROPER_RE = re.compile(r"\b(?:[A-Z][a-z]+)(?:\s+[A-Z][a-z]+)*\b")
_CLAUSE_SPLIT_RE = re.compile(r"[.,;:!?]")


@dataclass
class ClueSpec:
    node_id: int
    depth: int
    oblique_text: str
    uses_attributes: list[str] = field(default_factory=list)

    def to_json_obj(self) -> dict:
        return {
            "node_id": self.node_id,
            "depth": self.depth,
            "oblique_text": self.oblique_text,
            "uses_attributes": list(self.uses_attributes),
        }


@dataclass
class QuestionDraft:
    text: str
    seed_answer: str
    clues: list[ClueSpec]
    round: int = 0
    status: str = STATUS_DRAFT
    word_count: int = 0

    def deep_clue_count(self) -> int:
        return sum(1 for c in self.clues if c.depth >= 2)

    def to_json_obj(self) -> dict:
        return {
            "text": self.text,
            "seed_answer": self.seed_answer,
            "clues": [c.to_json_obj() for c in self.clues],
            "round": self.round,
            "status": self.status,
            "word_count": self.word_count,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "QuestionDraft":
        return cls(
            text=obj["text"],
            seed_answer=obj["seed_answer"],
            clues=[ClueSpec(**c) for c in obj["clues"]],
            round=obj.get("round", 0),
            status=obj.get("status", STATUS_DRAFT),
            word_count=obj.get("word_count", word_count(obj["text"])),
        )


@dataclass
class ProbeResult:
    answers: list[str]
    match_count: int
    solved: bool

    def to_json_obj(self) -> dict:
        return {"answers": list(self.answers), "match_count": self.match_count, "solved": self.solved}


def detect_anchors(clause: str) -> list[str]:
    """Explicit anchors in one clause: years, model numbers, proper names.

    A capitalized word opening the clause is not counted; mid-clause
    capitalized words are.
    """
    anchors: list[str] = []
    seen: set[tuple[int, int]] = set()
    clause_start = len(clause) - len(clause.lstrip())
    for match in _MODEL_NUMBER_RE.finditer(clause):
        anchors.append(match.group(0))
        seen.add(match.span())
    for _, start, end in find_years(clause):
        if not any(s <= start < e for s, e in seen):
            anchors.append(clause[start:end])
            seen.add((start, end))
    for match in _PROPER_RE.finditer(clause):
        if match.start() == clause_start:
            continue
        if not any(s < match.end() and match.start() < e for s, e in seen):
            anchors.append(match.group(0))
    return anchors


def killer_pairs(text: str) -> list[tuple[str, str]]:
    """Co-occurring explicit anchors within one clause, e.g. model + maker."""
    pairs = []
    for clause in _CLAUSE_SPLIT_RE.split(text):
        anchors = detect_anchors(clause)
        for i in range(len(anchors)):
            for j in range(i + 1, len(anchors)):
                pairs.append((anchors[i], anchors[j]))
    return pairs


class QuestionForge:
    def __init__(
        self,
        store: CorpusStore,
        gateway: ModelGateway,
        n_deep: int = 2,
        max_words: int = 120,
        probe_runs: int = 5,
        max_rounds: int = 3,
        retry_limit: int = 3,
        rewrite_retries: int = 3,
        anchor_phrases: tuple[tuple[str, str], ...] = DEFAULT_ANCHOR_PHRASES,
        artifact_sink: Callable[[str, dict], None] | None = None,
    ) -> None:
        self.store = store
        self.gateway = gateway
        self.n_deep = n_deep
        self.max_words = max_words
        self.probe_runs = probe_runs
        self.max_rounds = max_rounds
        self.retry_limit = retry_limit
        self.rewrite_retries = rewrite_retries
        self.anchor_phrases = anchor_phrases
        self.artifact_sink = artifact_sink or (lambda name, payload: None)

    # -- banned-term bookkeeping ---------------------------------------

    def _seed_forms(self, graph: EvidenceGraph) -> list[str]:
        seed = graph.node_by_id(graph.seed_id)
        try:
            page = self.store.get_page(seed.title)
            return [page.title, *sorted(page.aliases)]
        except PageNotFoundError:
            return [seed.title]

    def _depth1_titles(self, graph: EvidenceGraph) -> list[str]:
        return [n.title for n in graph.nodes_at_depth(1)]

    def _depth1_forms(self, graph: EvidenceGraph) -> list[str]:
        forms = []
        for title in self._depth1_titles(graph):
            forms.append(title)
            try:
                forms.extend(sorted(self.store.get_page(title).aliases))
            except PageNotFoundError:
                pass
        return forms

    @staticmethod
    def _leak(text: str, banned: list[str]) -> str | None:
        for term in banned:
            if contains_term(text, term):
                return term
        return None

    # -- clue construction ----------------------------------------------

    def build_clues(self, graph: EvidenceGraph) -> list[ClueSpec]:
        """One oblique clue per non-seed node, generated leaf-first.

        A clue that keeps leaking banned terms after retry_limit attempts is
        dropped; zero surviving clues is a generation error.
        """
        others = [n for n in graph.nodes if n.id != graph.seed_id]
        if not others:
            raise GenerationError("graph has no nodes beyond the seed")
        banned = self._seed_forms(graph) + self._depth1_titles(graph)
        clues: list[ClueSpec] = []
        for node in sorted(others, key=lambda n: (-n.depth, n.id)):
            edge = graph.parent_edge(node.id)
            assert edge is not None
            clue = None
            for attempt in range(1, self.retry_limit + 1):
                try:
                    response = self.gateway.chat(
                        clue_messages(
                            entity=node.title,
                            depth=node.depth,
                            relation=edge.relation.value,
                            direction=edge.direction.value,
                            evidence=edge.evidence_passage,
                            attributes=node.attributes,
                            banned=banned,
                            attempt=attempt,
                        ),
                        CLUE_SCHEMA,
                    )
                except (GatewayError, SchemaViolationError) as exc:
                    logger.warning("clue attempt %d for %r failed: %s", attempt, node.title, exc)
                    continue
                leak = self._leak(response["clue"], banned)
                if leak is not None:
                    logger.warning("clue for %r leaked %r, regenerating", node.title, leak)
                    continue
                clue = ClueSpec(
                    node_id=node.id,
                    depth=node.depth,
                    oblique_text=response["clue"],
                    uses_attributes=list(response.get("used_attributes", [])),
                )
                break
            if clue is None:
                logger.warning("clue for %r dropped after %d attempts", node.title, self.retry_limit)
                continue
            clues.append(clue)
        if not clues:
            raise GenerationError("no clue survived generation")
        return clues

    # -- composition ------------------------------------------------------

    def compose_question(
        self, clues: list[ClueSpec], graph: EvidenceGraph, n_deep: int | None = None
    ) -> QuestionDraft:
        n_deep = self.n_deep if n_deep is None else n_deep
        deep = [c for c in clues if c.depth >= 2]
        if len(deep) < n_deep:
            raise ValueError(f"need at least {n_deep} deep clues, have {len(deep)}")
        seed_title = graph.node_by_id(graph.seed_id).title
        banned = self._seed_forms(graph)
        ordered = sorted(clues, key=lambda c: (-c.depth, c.node_id))
        for attempt in range(1, self.retry_limit + 1):
            try:
                response = self.gateway.chat(
                    compose_messages(
                        target=seed_title,
                        clues=[c.oblique_text for c in ordered],
                        banned=banned,
                        max_words=self.max_words,
                        attempt=attempt,
                    ),
                    QUESTION_SCHEMA,
                )
            except (GatewayError, SchemaViolationError) as exc:
                logger.warning("compose attempt %d failed: %s", attempt, exc)
                continue
            text = response["question"]
            if self._leak(text, banned) is not None or word_count(text) > self.max_words:
                logger.warning("compose attempt %d violated draft invariants", attempt)
                continue
            return QuestionDraft(
                text=text,
                seed_answer=seed_title,
                clues=list(ordered),
                round=0,
                status=STATUS_DRAFT,
                word_count=word_count(text),
            )
        raise GenerationError(f"could not compose a valid question in {self.retry_limit} attempts")

    # -- obfuscation -------------------------------------------------------

    def _apply_anchor_table(self, text: str) -> str:
        for phrase, replacement in self.anchor_phrases:
            pattern = re.compile(re.escape(phrase), re.IGNORECASE)
            text = pattern.sub(replacement, text)
        for year, start, end in reversed(find_years(text)):
            era = year_to_era(year)
            prefix = text[:start]
            # "in 2003" reads as "in the early 21st century"
            text = prefix + era + text[end:]
        return text

    def obfuscate(self, draft: QuestionDraft) -> QuestionDraft:
        """Generalize explicit anchors, then paraphrase; the clue set is untouched."""
        if draft.status != STATUS_DRAFT:
            raise ValueError(f"obfuscate expects a draft, got status {draft.status!r}")
        banned = [draft.seed_answer, *self._aliases_of(draft.seed_answer)]
        tabled = self._apply_anchor_table(draft.text)
        for attempt in range(1, self.retry_limit + 1):
            try:
                response = self.gateway.chat(
                    obfuscate_messages(tabled, banned, self.max_words, attempt), QUESTION_SCHEMA
                )
            except (GatewayError, SchemaViolationError) as exc:
                logger.warning("obfuscate attempt %d failed: %s", attempt, exc)
                continue
            text = response["question"]
            if self._leak(text, banned) is not None or word_count(text) > self.max_words:
                logger.warning("obfuscate attempt %d reintroduced banned content", attempt)
                continue
            draft.text = text
            draft.word_count = word_count(text)
            return draft
        raise GenerationError(f"obfuscation failed after {self.retry_limit} attempts")

    def _aliases_of(self, title: str) -> list[str]:
        try:
            return sorted(self.store.get_page(title).aliases)
        except PageNotFoundError:
            return []

    # -- probing -------------------------------------------------------------

    def probe_solvability(self, draft: QuestionDraft, runs: int | None = None) -> ProbeResult:
        """Independent answer attempts; solved means a strict majority hits the seed."""
        runs = self.probe_runs if runs is None else runs
        if runs < 3 or runs % 2 == 0:
            raise ValueError("probe runs must be an odd number >= 3")
        answers: list[str] = []
        match_count = 0
        for run in range(1, runs + 1):
            try:
                response = self.gateway.chat(
                    probe_messages(draft.text, draft.round, run, runs), ANSWER_SCHEMA
                )
                answer = response["answer"]
            except (GatewayError, SchemaViolationError) as exc:
                logger.warning("probe run %d failed, counted as non-match: %s", run, exc)
                answer = ""
            answers.append(answer)
            if answer and self._matches_seed(answer, draft.seed_answer):
                match_count += 1
        draft.status = STATUS_PROBED
        return ProbeResult(answers=answers, match_count=match_count, solved=match_count * 2 > runs)

    def _matches_seed(self, answer: str, seed_title: str) -> bool:
        try:
            return self.store.resolve_alias(answer) == self.store.resolve_alias(seed_title)
        except PageNotFoundError:
            return False

    # -- hardening -------------------------------------------------------------

    def harden(self, draft: QuestionDraft, graph: EvidenceGraph) -> QuestionDraft:
        """Rewrite a still-solvable question against a minimal deep subgraph.

        Any self-verification failure rolls the draft back to its pre-rewrite
        state and retries; exhausting rewrite_retries raises HardeningError.
        """
        if draft.status != STATUS_PROBED:
            raise ValueError("harden expects a probed draft")
        deep_clues = sorted(
            (c for c in draft.clues if c.depth >= 2), key=lambda c: (-c.depth, c.node_id)
        )
        if len(deep_clues) < self.n_deep:
            raise HardeningError(f"only {len(deep_clues)} deep clues, need {self.n_deep}")
        chosen = deep_clues[: self.n_deep]
        subgraph_ids: set[int] = set()
        for clue in chosen:
            subgraph_ids.update(graph.path_to_seed(clue.node_id))
        new_clues = [c for c in draft.clues if c.node_id in subgraph_ids]
        banned = self._seed_forms(graph) + self._depth1_forms(graph)
        soft_targets = sorted({term for pair in killer_pairs(draft.text) for term in pair})
        subgraph_text = self._render_subgraph(graph, subgraph_ids)
        for attempt in range(1, self.rewrite_retries + 1):
            problem = None
            text = None
            try:
                response = self.gateway.chat(
                    harden_messages(
                        question=draft.text,
                        subgraph=subgraph_text,
                        soft_targets=soft_targets,
                        banned=banned,
                        max_words=self.max_words,
                        attempt=attempt,
                    ),
                    QUESTION_SCHEMA,
                )
                text = response["question"]
                problem = self._verify_hardened(text, new_clues, graph, banned, soft_targets, subgraph_ids)
            except (GatewayError, SchemaViolationError) as exc:
                problem = f"rewrite call failed: {exc}"
            self.artifact_sink(
                "harden_attempt",
                {"attempt": attempt, "round": draft.round, "ok": problem is None, "problem": problem},
            )
            if problem is None:
                assert text is not None
                draft.text = text
                draft.clues = new_clues
                draft.word_count = word_count(text)
                draft.round += 1
                draft.status = STATUS_HARDENED
                return draft
            logger.warning("harden attempt %d rolled back: %s", attempt, problem)
        raise HardeningError(f"hardening failed after {self.rewrite_retries} attempts")

    def _verify_hardened(
        self,
        text: str,
        clues: list[ClueSpec],
        graph: EvidenceGraph,
        banned: list[str],
        soft_targets: list[str],
        subgraph_ids: set[int],
    ) -> str | None:
        """Self-verification; returns the failed check, or None when all pass."""
        if sum(1 for c in clues if c.depth >= 2) < self.n_deep:
            return "deep-cue count below n_deep"
        leak = self._leak(text, banned)
        if leak is not None:
            return f"banned term {leak!r} in surface text"
        for term in soft_targets:
            if contains_term(text, term):
                return f"soft target {term!r} still explicit"
        for clue in clues:
            if clue.node_id not in subgraph_ids or graph.parent_edge(clue.node_id) is None:
                return f"clue for node {clue.node_id} has no supporting subgraph edge"
        if word_count(text) > self.max_words:
            return f"length {word_count(text)} exceeds {self.max_words} words"
        return None

    @staticmethod
    def _render_subgraph(graph: EvidenceGraph, subgraph_ids: set[int]) -> str:
        lines = []
        for node_id in sorted(subgraph_ids):
            node = graph.node_by_id(node_id)
            edge = graph.parent_edge(node_id)
            if edge is None:
                lines.append(f"- ANSWER (depth 0): {node.title}")
            else:
                parent = graph.node_by_id(edge.parent_id)
                lines.append(
                    f"- depth {node.depth}: {node.title} [{edge.relation.value}, {edge.direction.value}"
                    f" of {parent.title}]: {edge.evidence_passage}"
                )
        return "\n".join(lines)

    # -- refinement loop -----------------------------------------------------------

    def refine_loop(
        self, draft: QuestionDraft, graph: EvidenceGraph, max_rounds: int | None = None
    ) -> QuestionDraft:
        """Probe; while solved, harden; stop at the first unsolved probe or the round cap.

        The draft leaves with status hardened (ready for the quality gate) or
        rejected (hardening exhausted its retries).
        """
        max_rounds = self.max_rounds if max_rounds is None else max_rounds
        while True:
            if draft.round >= max_rounds:
                draft.status = STATUS_HARDENED
                return draft
            probe = self.probe_solvability(draft)
            self.artifact_sink("probe", {"round": draft.round, **probe.to_json_obj()})
            if not probe.solved:
                draft.status = STATUS_HARDENED
                return draft
            try:
                draft = self.harden(draft, graph)
            except HardeningError as exc:
                logger.warning("draft rejected: %s", exc)
                draft.status = STATUS_REJECTED
                return draft
