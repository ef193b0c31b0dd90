"""Question quality evaluation: structural screening plus two-step validation.

A question first has its textual structure extracted and screened (orphans,
attribute count, edge count, diameter). Survivors face a majority vote over
repeated answer attempts; flagged questions are decomposed into structured
predicates, screened on explicit constraints, and finally matched against
evidence candidate by candidate. The full trail lands in a QualityReport
whose decision can be recomputed from the recorded scores alone.
"""

from __future__ import annotations

import logging
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

from .errors import (
    DecompositionError,
    GatewayError,
    PageNotFoundError,
    SchemaViolationError,
    StructureExtractionError,
)
from .gateway import ModelGateway
from .prompts import (
    ANSWER_SCHEMA,
    PREDICATES_SCHEMA,
    STRUCTURE_SCHEMA,
    VERDICT_SCHEMA,
    decompose_messages,
    structure_messages,
    verdict_messages,
    vote_messages,
)
from .store import CorpusStore
from .textutil import canonical_key

logger = logging.getLogger(__name__)

RELATION_NAMES = frozenset({"is_a", "part_of", "has_attribute", "causes", "requires", "used_for"})
NODE_KINDS = frozenset({"subject", "object", "attribute"})

DEFAULT_THRESHOLDS = (3, 5, 3)  # alpha, beta, gamma
HIGH_PRIORITY_CUTOFF = 2.0
HIGH_PRIORITY_FIELDS = frozenset({"time", "location", "entity_type"})
VERDICT_VALUES = {"Y": 1.0, "P": 0.5, "U": 0.0, "N": 0.0}

DECISION_VOTE = "accepted_at_vote"
DECISION_SCREENING = "accepted_at_screening"
DECISION_MATCHING = "accepted_at_matching"
DECISION_REJECTED = "rejected"

_STOPWORDS = frozenset(
    "a an the of in on at and or to by for with from is was were are be been that this "
    "which whose who what as its their his her it they them there not no does do did".split()
)
_TOKEN_RE = re.compile(r"\w+", re.UNICODE)

_TIME_FIELDS = frozenset({"time", "date", "year", "era", "period"})
_LOCATION_FIELDS = frozenset({"location", "place", "region", "country", "state", "city"})
_TYPE_FIELDS = frozenset({"entity_type", "type", "category", "class"})

_TIME_ATTR_HINTS = ("year", "date", "founded", "inception", "established", "formed", "born", "launched", "opened")
_LOCATION_ATTR_HINTS = ("location", "headquarters", "country", "state", "region", "city", "place", "hq")
_TYPE_ATTR_HINTS = ("type", "instance of", "category", "class")

_DECADE_RE = re.compile(r"^(?:the\s+)?(early|mid|late)?\s*(\d{3})0s$")
_CENTURY_RE = re.compile(r"^(?:the\s+)?(early|mid|late)\s+(\d{1,2})(?:st|nd|rd|th)\s+century$")
_YEAR_RANGE_RE = re.compile(r"^(?:between\s+)?(\d{4})\s*(?:-|–|and|to)\s*(\d{4})$")
_BARE_YEAR_RE = re.compile(r"^(?:in\s+)?(\d{4})$")
_REGION_RE = re.compile(
    r"^(southern|northern|eastern|western|central|south|north|east|west)\b", re.IGNORECASE
)
_REGION_HINTS = {
    "southern": "South",
    "south": "South",
    "northern": "North",
    "north": "North",
    "eastern": "East",
    "east": "East",
    "western": "West",
    "west": "West",
    "central": "Central",
}

_YEAR_IN_TEXT_RE = re.compile(r"\b(1[0-9]{3}|20[0-9]{2})\b")


# -- deterministic normalizers -------------------------------------------


def normalize_time_phrase(value: str) -> tuple[int, int] | None:
    """Vague time expression to an explicit year interval.

    Decade phrases map early/mid/late to the first/middle/last four years
    ("early 2020s" -> (2020, 2023)); century phrases use wider bands
    ("early 21st century" -> (2000, 2015)). Returns None when unrecognized.
    """
    text = value.strip().casefold()
    match = _DECADE_RE.match(text)
    if match:
        part, decade = match.group(1), int(match.group(2)) * 10
        if part == "early":
            return decade, decade + 3
        if part == "mid":
            return decade + 3, decade + 6
        if part == "late":
            return decade + 6, decade + 9
        return decade, decade + 9
    match = _CENTURY_RE.match(text)
    if match:
        part, century = match.group(1), int(match.group(2))
        start = (century - 1) * 100
        if part == "early":
            return start, start + 15
        if part == "mid":
            return start + 40, start + 60
        return start + 85, start + 99
    match = _YEAR_RANGE_RE.match(text)
    if match:
        lo, hi = int(match.group(1)), int(match.group(2))
        return (lo, hi) if lo <= hi else (hi, lo)
    match = _BARE_YEAR_RE.match(text)
    if match:
        year = int(match.group(1))
        return year, year
    return None


def normalize_region(value: str) -> str | None:
    """Fuzzy geographic qualifier to a region hint ("southern Indian state" -> South)."""
    match = _REGION_RE.match(value.strip())
    if match:
        return _REGION_HINTS[match.group(1).casefold()]
    return None


# -- domain types ----------------------------------------------------------


@dataclass
class TSNode:
    id: str
    label: str
    kind: str


@dataclass
class TSEdge:
    src: str
    dst: str
    relation: str


@dataclass
class TextStructureGraph:
    nodes: list[TSNode] = field(default_factory=list)
    edges: list[TSEdge] = field(default_factory=list)

    def to_json_obj(self) -> dict:
        return {
            "nodes": [{"id": n.id, "label": n.label, "kind": n.kind} for n in self.nodes],
            "edges": [{"from": e.src, "to": e.dst, "relation": e.relation} for e in self.edges],
        }


@dataclass
class StructureMetrics:
    orphan_count: int
    attribute_count: int
    edge_count: int
    diameter: int

    def to_json_obj(self) -> dict:
        return {
            "orphan_count": self.orphan_count,
            "attribute_count": self.attribute_count,
            "edge_count": self.edge_count,
            "diameter": self.diameter,
        }


@dataclass
class StructuredPredicate:
    field: str
    operator: str
    value: str
    normalized: dict | None
    source_span: tuple[int, int]
    confidence: float
    priority_weight: float = 1.0
    null_reason: str | None = None

    def to_json_obj(self) -> dict:
        obj = {
            "field": self.field,
            "operator": self.operator,
            "value": self.value,
            "normalized": self.normalized,
            "source_span": list(self.source_span),
            "confidence": self.confidence,
            "priority_weight": self.priority_weight,
        }
        if self.null_reason is not None:
            obj["null_reason"] = self.null_reason
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "StructuredPredicate":
        return cls(
            field=obj["field"],
            operator=obj["operator"],
            value=obj["value"],
            normalized=obj.get("normalized"),
            source_span=tuple(obj["source_span"]),
            confidence=obj["confidence"],
            priority_weight=obj.get("priority_weight", 1.0),
            null_reason=obj.get("null_reason"),
        )


@dataclass
class Verdict:
    value: str
    evidence_ref: str
    justification: str

    def to_json_obj(self) -> dict:
        return {"verdict": self.value, "evidence_ref": self.evidence_ref, "justification": self.justification}


@dataclass
class VoteOutcome:
    predictions: list[str]
    match_count: int
    accepted: bool
    candidates: list[str]

    def to_json_obj(self) -> dict:
        return {
            "predictions": list(self.predictions),
            "match_count": self.match_count,
            "accepted": self.accepted,
            "candidates": list(self.candidates),
        }


@dataclass
class CandidateAssessment:
    title: str
    s_exp: float = 0.0
    screened_out: bool = False
    screened_out_by: str | None = None
    verdicts: list[Verdict] = field(default_factory=list)
    s_norm: float | None = None
    eliminated_by: str | None = None

    def to_json_obj(self) -> dict:
        return {
            "title": self.title,
            "s_exp": self.s_exp,
            "screened_out": self.screened_out,
            "screened_out_by": self.screened_out_by,
            "verdicts": [v.to_json_obj() for v in self.verdicts],
            "s_norm": self.s_norm,
            "eliminated_by": self.eliminated_by,
        }


@dataclass
class QualityReport:
    question: str
    answer: str
    structure_metrics: StructureMetrics | None = None
    structure_pass: bool = False
    vote: VoteOutcome | None = None
    predicates: list[StructuredPredicate] = field(default_factory=list)
    candidates: list[CandidateAssessment] = field(default_factory=list)
    decision: str = DECISION_REJECTED
    reason: str = ""

    @property
    def accepted(self) -> bool:
        return self.decision.startswith("accepted")

    def to_json_obj(self) -> dict:
        return {
            "question": self.question,
            "answer": self.answer,
            "structure": {
                "metrics": self.structure_metrics.to_json_obj() if self.structure_metrics else None,
                "pass": self.structure_pass,
            },
            "vote": self.vote.to_json_obj() if self.vote else None,
            "predicates": [p.to_json_obj() for p in self.predicates],
            "candidates": [c.to_json_obj() for c in self.candidates],
            "decision": self.decision,
            "reason": self.reason,
        }


# -- structural metrics ----------------------------------------------------


def compute_metrics(
    graph: TextStructureGraph, thresholds: tuple[int, int, int] = DEFAULT_THRESHOLDS
) -> tuple[StructureMetrics, bool]:
    """Orphans, attribute count, edge count, and diameter of the undirected view.

    Passing requires zero orphans and all three counts at or above the
    (alpha, beta, gamma) thresholds. The diameter is the longest shortest
    path inside the largest connected component, 0 for a single node.
    """
    alpha, beta, gamma = thresholds
    adjacency: dict[str, set[str]] = {n.id: set() for n in graph.nodes}
    for edge in graph.edges:
        adjacency[edge.src].add(edge.dst)
        adjacency[edge.dst].add(edge.src)
    components = _connected_components(adjacency)
    largest = max(components, key=len) if components else set()
    orphan_count = len(adjacency) - len(largest)
    diameter = _component_diameter(adjacency, largest)
    metrics = StructureMetrics(
        orphan_count=orphan_count,
        attribute_count=sum(1 for n in graph.nodes if n.kind == "attribute"),
        edge_count=len(graph.edges),
        diameter=diameter,
    )
    passed = (
        metrics.orphan_count == 0
        and metrics.attribute_count >= alpha
        and metrics.edge_count >= beta
        and metrics.diameter >= gamma
    )
    return metrics, passed


def _connected_components(adjacency: dict[str, set[str]]) -> list[set[str]]:
    seen: set[str] = set()
    components = []
    for start in adjacency:
        if start in seen:
            continue
        component = {start}
        queue = deque([start])
        while queue:
            node = queue.popleft()
            for neighbor in adjacency[node]:
                if neighbor not in component:
                    component.add(neighbor)
                    queue.append(neighbor)
        seen |= component
        components.append(component)
    return components


def _component_diameter(adjacency: dict[str, set[str]], component: set[str]) -> int:
    best = 0
    for start in component:
        dist = {start: 0}
        queue = deque([start])
        while queue:
            node = queue.popleft()
            for neighbor in adjacency[node]:
                if neighbor in component and neighbor not in dist:
                    dist[neighbor] = dist[node] + 1
                    queue.append(neighbor)
        if dist:
            best = max(best, max(dist.values()))
    return best


def s_norm_score(verdicts: Sequence[Verdict], weights: Sequence[float]) -> float:
    """Weighted Y/P/U/N aggregation; unknowns keep their weight in the denominator."""
    total = sum(weights)
    if total == 0:
        return 0.0
    return sum(w * VERDICT_VALUES[v.value] for v, w in zip(verdicts, weights)) / total


# -- the gate ----------------------------------------------------------------


@dataclass
class ScreeningOutcome:
    survivors: list[str]
    s_exp: dict[str, float]
    decision: str | None  # None means forward to evidence matching
    reason: str = ""


class QualityGate:
    def __init__(
        self,
        store: CorpusStore,
        gateway: ModelGateway,
        thresholds: tuple[int, int, int] = DEFAULT_THRESHOLDS,
        vote_runs: int = 5,
        retry_limit: int = 3,
        high_priority_cutoff: float = HIGH_PRIORITY_CUTOFF,
        evidence_limit: int = 20,
    ) -> None:
        self.store = store
        self.gateway = gateway
        self.thresholds = thresholds
        self.vote_runs = vote_runs
        self.retry_limit = retry_limit
        self.high_priority_cutoff = high_priority_cutoff
        self.evidence_limit = evidence_limit

    # -- stage 0: structure -----------------------------------------------

    def extract_structure(self, question: str) -> TextStructureGraph:
        """Chat-extract the subject/object/attribute graph under a strict schema."""
        if not question.strip():
            raise ValueError("question must be non-empty")
        last_problem = ""
        for attempt in range(1, self.retry_limit + 1):
            try:
                response = self.gateway.chat(structure_messages(question, attempt), STRUCTURE_SCHEMA)
            except (GatewayError, SchemaViolationError) as exc:
                last_problem = str(exc)
                logger.warning("structure attempt %d failed: %s", attempt, exc)
                continue
            try:
                return self._validate_structure(response)
            except ValueError as exc:
                last_problem = str(exc)
                logger.warning("structure attempt %d invalid: %s", attempt, exc)
        raise StructureExtractionError(f"structure extraction failed: {last_problem}")

    @staticmethod
    def _validate_structure(obj: dict) -> TextStructureGraph:
        nodes = [TSNode(id=n["id"], label=n["label"], kind=n["kind"]) for n in obj["nodes"]]
        ids = [n.id for n in nodes]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate node ids")
        for node in nodes:
            if node.kind not in NODE_KINDS:
                raise ValueError(f"unknown node kind {node.kind!r}")
        id_set = set(ids)
        edges = []
        for e in obj["edges"]:
            if e["relation"] not in RELATION_NAMES:
                raise ValueError(f"unknown relation {e['relation']!r}")
            if e["from"] not in id_set or e["to"] not in id_set:
                raise ValueError("edge endpoint missing from nodes")
            edges.append(TSEdge(src=e["from"], dst=e["to"], relation=e["relation"]))
        return TextStructureGraph(nodes=nodes, edges=edges)

    def compute_metrics(
        self, graph: TextStructureGraph, thresholds: tuple[int, int, int] | None = None
    ) -> tuple[StructureMetrics, bool]:
        return compute_metrics(graph, thresholds or self.thresholds)

    # -- stage 1: prediction vote -------------------------------------------

    def collect_predictions(self, question: str, runs: int | None = None) -> list[str]:
        runs = self.vote_runs if runs is None else runs
        predictions = []
        for run in range(1, runs + 1):
            try:
                response = self.gateway.chat(vote_messages(question, run, runs), ANSWER_SCHEMA)
                predictions.append(response["answer"])
            except (GatewayError, SchemaViolationError) as exc:
                logger.warning("vote run %d failed, counted as empty: %s", run, exc)
                predictions.append("")
        return predictions

    def majority_vote(self, predictions: Sequence[str], seed: str) -> VoteOutcome:
        """Accept on a strict majority for the seed; otherwise flag with candidates."""
        if len(predictions) < 3:
            raise ValueError("majority vote needs at least 3 predictions")
        seed_canon = self._canonical(seed)
        match_count = sum(1 for p in predictions if p and self._canonical(p) == seed_canon)
        accepted = match_count * 2 > len(predictions)
        candidates = [seed]
        seen = {seed_canon}
        for prediction in predictions:
            if not prediction:
                continue
            canon = self._canonical(prediction)
            if canon not in seen:
                seen.add(canon)
                candidates.append(prediction)
        return VoteOutcome(
            predictions=list(predictions),
            match_count=match_count,
            accepted=accepted,
            candidates=[seed] if accepted else candidates,
        )

    def _canonical(self, name: str) -> str:
        try:
            return canonical_key(self.store.resolve_alias(name))
        except PageNotFoundError:
            return canonical_key(name)

    # -- stage 2a: constraint decomposition ------------------------------------

    def decompose_constraints(self, question: str) -> list[StructuredPredicate]:
        """Chat-decompose, then normalize deterministically and check coverage."""
        if not question.strip():
            raise ValueError("question must be non-empty")
        last_problem = ""
        raw = None
        for attempt in range(1, self.retry_limit + 1):
            try:
                response = self.gateway.chat(decompose_messages(question, attempt), PREDICATES_SCHEMA)
            except (GatewayError, SchemaViolationError) as exc:
                last_problem = str(exc)
                logger.warning("decompose attempt %d failed: %s", attempt, exc)
                continue
            problem = self._span_problem(response["predicates"], len(question))
            if problem:
                last_problem = problem
                logger.warning("decompose attempt %d invalid: %s", attempt, problem)
                continue
            raw = response["predicates"]
            break
        if raw is None:
            raise DecompositionError(f"constraint decomposition failed: {last_problem}")
        predicates = [self._normalize_predicate(p) for p in raw]
        residual = self._coverage_residual(question, predicates)
        if residual is not None:
            predicates.append(residual)
        return predicates

    @staticmethod
    def _span_problem(raw: list[dict], length: int) -> str | None:
        for p in raw:
            start, end = p["source_span"]
            if not (0 <= start < end <= length):
                return f"source_span [{start},{end}) outside question bounds"
        return None

    def _normalize_predicate(self, raw: dict) -> StructuredPredicate:
        canonical_field = canonical_key(raw["field"])
        normalized: dict | None
        null_reason: str | None = None
        if canonical_field in _TIME_FIELDS:
            field_name = "time"
            interval = normalize_time_phrase(raw["value"])
            if interval is None:
                normalized, null_reason = None, "unrecognized time phrase"
            else:
                normalized = {"kind": "interval", "value": list(interval)}
        elif canonical_field in _LOCATION_FIELDS:
            field_name = "location"
            hint = normalize_region(raw["value"])
            if hint is None:
                normalized, null_reason = None, "unrecognized region qualifier"
            else:
                normalized = {"kind": "region_hint", "value": hint}
        elif canonical_field in _TYPE_FIELDS:
            field_name = "entity_type"
            normalized = {"kind": "category", "value": canonical_key(raw["value"])}
        else:
            field_name = raw["field"]
            normalized = {"kind": "text", "value": canonical_key(raw["value"])}
        weight = 2.0 if field_name in HIGH_PRIORITY_FIELDS else 1.0
        return StructuredPredicate(
            field=field_name,
            operator=raw["operator"],
            value=raw["value"],
            normalized=normalized,
            source_span=tuple(raw["source_span"]),
            confidence=raw["confidence"],
            priority_weight=weight,
            null_reason=null_reason,
        )

    @staticmethod
    def _coverage_residual(
        question: str, predicates: list[StructuredPredicate]
    ) -> StructuredPredicate | None:
        """Residual predicate over content tokens no source span covers."""
        uncovered: list[tuple[int, int, str]] = []
        for match in _TOKEN_RE.finditer(question):
            token = match.group(0)
            if token.casefold() in _STOPWORDS or token.isdigit() and len(token) < 4:
                continue
            covered = any(
                p.source_span[0] <= match.start() and match.end() <= p.source_span[1]
                for p in predicates
            )
            if not covered:
                uncovered.append((match.start(), match.end(), token))
        if not uncovered:
            return None
        return StructuredPredicate(
            field="residual",
            operator="contains",
            value=" ".join(t for _, _, t in uncovered),
            normalized=None,
            source_span=(uncovered[0][0], uncovered[-1][1]),
            confidence=0.0,
            priority_weight=1.0,
            null_reason="uncovered text",
        )

    # -- stage 2b: explicit screening ----------------------------------------

    def screen_explicit(
        self, predicates: Sequence[StructuredPredicate], candidates: Sequence[str]
    ) -> ScreeningOutcome:
        """Discard candidates whose stored attributes contradict an explicit predicate.

        S_exp counts only predicates the candidate has a stored value for, so
        missing corpus attributes never punish a candidate. Decides early when
        the seed (first candidate) is the only survivor or uniquely best.
        """
        explicit = [p for p in predicates if p.normalized is not None]
        s_exp: dict[str, float] = {}
        survivors: list[str] = []
        screened_out: dict[str, str] = {}
        if not explicit:
            logger.warning("no explicit predicates: screening has no power, forwarding all")
            return ScreeningOutcome(
                survivors=list(candidates), s_exp={c: 0.0 for c in candidates}, decision=None
            )
        for candidate in candidates:
            page = None
            try:
                page = self.store.get_page(candidate)
            except PageNotFoundError:
                pass
            evaluable = satisfied = 0
            failed_field = None
            for predicate in explicit:
                outcome = None if page is None else _eval_predicate(predicate, page.attributes)
                if outcome is None:
                    continue
                evaluable += 1
                if outcome:
                    satisfied += 1
                elif failed_field is None:
                    failed_field = predicate.field
            s_exp[candidate] = satisfied / evaluable if evaluable else 0.0
            if failed_field is not None:
                screened_out[candidate] = failed_field
            else:
                survivors.append(candidate)
        seed = candidates[0]
        if seed in screened_out:
            return ScreeningOutcome(
                survivors=survivors,
                s_exp=s_exp,
                decision=DECISION_REJECTED,
                reason=f"seed failed explicit predicate {screened_out[seed]!r}",
            )
        if survivors == [seed]:
            return ScreeningOutcome(
                survivors=survivors, s_exp=s_exp, decision=DECISION_SCREENING, reason="only seed survives"
            )
        others_best = max((s_exp[c] for c in survivors if c != seed), default=0.0)
        if s_exp[seed] > others_best:
            return ScreeningOutcome(
                survivors=survivors,
                s_exp=s_exp,
                decision=DECISION_SCREENING,
                reason="seed has the uniquely highest explicit-match score",
            )
        return ScreeningOutcome(survivors=survivors, s_exp=s_exp, decision=None)

    # -- stage 2c: evidence matching ---------------------------------------------

    def evidence_pack(self, candidate: str) -> list[str]:
        try:
            page = self.store.get_page(candidate)
        except PageNotFoundError:
            return []
        return [p.text for p in page.paragraphs[: self.evidence_limit]]

    def match_evidence(
        self,
        predicates: Sequence[StructuredPredicate],
        candidate: str,
        evidence_pack: Sequence[str],
    ) -> CandidateAssessment:
        """Per-predicate Y/P/U/N verdicts; a high-priority N eliminates immediately."""
        assessment = CandidateAssessment(title=candidate)
        if not evidence_pack:
            assessment.verdicts = [
                Verdict("U", "", "no evidence available") for _ in predicates
            ]
            assessment.s_norm = s_norm_score(assessment.verdicts, [p.priority_weight for p in predicates])
            return assessment
        for predicate in predicates:
            verdict = self._one_verdict(predicate, candidate, evidence_pack)
            assessment.verdicts.append(verdict)
            if verdict.value == "N" and predicate.priority_weight >= self.high_priority_cutoff:
                assessment.eliminated_by = predicate.field
                assessment.s_norm = None
                return assessment
        assessment.s_norm = s_norm_score(
            assessment.verdicts, [p.priority_weight for p in predicates]
        )
        return assessment

    def _one_verdict(
        self, predicate: StructuredPredicate, candidate: str, evidence_pack: Sequence[str]
    ) -> Verdict:
        predicate_text = f"{predicate.field} {predicate.operator} {predicate.value!r}"
        for attempt in range(1, self.retry_limit + 1):
            try:
                response = self.gateway.chat(
                    verdict_messages(candidate, predicate_text, list(evidence_pack), attempt),
                    VERDICT_SCHEMA,
                )
            except (GatewayError, SchemaViolationError) as exc:
                logger.warning("verdict attempt %d failed: %s", attempt, exc)
                continue
            if response["verdict"] in ("Y", "N") and not response["evidence_ref"].strip():
                logger.warning("verdict %s lacks evidence_ref, retrying", response["verdict"])
                continue
            return Verdict(
                value=response["verdict"],
                evidence_ref=response["evidence_ref"],
                justification=response["justification"],
            )
        # a judgment we cannot ground is recorded as unknown, not invented
        return Verdict("U", "", "no grounded verdict obtained from the model")

    # -- stage 3: adjudication -------------------------------------------------------

    def adjudicate(self, report: QualityReport) -> QualityReport:
        """Retain only when the seed's S_norm is strictly the highest among survivors."""
        seed = report.candidates[0] if report.candidates else None
        if seed is None or seed.title != report.answer:
            report.decision = DECISION_REJECTED
            report.reason = "seed assessment missing"
            return report
        if seed.eliminated_by is not None or seed.s_norm is None:
            report.decision = DECISION_REJECTED
            report.reason = f"seed contradicted on {seed.eliminated_by!r}"
            return report
        rivals = [c for c in report.candidates[1:] if c.eliminated_by is None and c.s_norm is not None]
        best_rival = max((c.s_norm for c in rivals), default=None)
        if best_rival is not None and seed.s_norm <= best_rival:
            report.decision = DECISION_REJECTED
            report.reason = (
                "tie on S_norm" if seed.s_norm == best_rival else "a rival outscores the seed"
            )
            return report
        report.decision = DECISION_MATCHING
        report.reason = "seed has the uniquely highest S_norm"
        return report

    # -- full workflow -----------------------------------------------------------------

    def evaluate(
        self,
        question: str,
        answer: str,
        predictions: Sequence[str] | None = None,
        extra_candidates: Sequence[str] = (),
    ) -> QualityReport:
        """Run the whole gate: structure screen, vote, then decomposition path."""
        report = QualityReport(question=question, answer=answer)
        try:
            structure = self.extract_structure(question)
        except StructureExtractionError as exc:
            report.reason = f"structure extraction failed: {exc}"
            return report
        report.structure_metrics, report.structure_pass = self.compute_metrics(structure)
        if not report.structure_pass:
            report.reason = "structure screening failed"
            return report
        if predictions is None:
            predictions = self.collect_predictions(question)
        report.vote = self.majority_vote(predictions, answer)
        if report.vote.accepted:
            report.decision = DECISION_VOTE
            report.reason = "majority of predictions match the seed"
            return report
        candidates = list(report.vote.candidates)
        for extra in extra_candidates:
            if self._canonical(extra) not in {self._canonical(c) for c in candidates}:
                candidates.append(extra)
        report.predicates = self.decompose_constraints(question)
        screening = self.screen_explicit(report.predicates, candidates)
        report.candidates = [
            CandidateAssessment(
                title=c,
                s_exp=screening.s_exp.get(c, 0.0),
                screened_out=c not in screening.survivors,
                screened_out_by=None if c in screening.survivors else "explicit predicate",
            )
            for c in candidates
        ]
        if screening.decision is not None:
            report.decision = screening.decision
            report.reason = screening.reason
            return report
        by_title = {c.title: c for c in report.candidates}
        for title in screening.survivors:
            assessment = self.match_evidence(report.predicates, title, self.evidence_pack(title))
            existing = by_title[title]
            existing.verdicts = assessment.verdicts
            existing.s_norm = assessment.s_norm
            existing.eliminated_by = assessment.eliminated_by
        return self.adjudicate(report)


# -- predicate evaluation against stored attributes ---------------------------


def _eval_predicate(predicate: StructuredPredicate, attributes: dict[str, str]) -> bool | None:
    """True/False when the candidate's attributes can evaluate the predicate, else None."""
    assert predicate.normalized is not None
    kind, value = predicate.normalized["kind"], predicate.normalized["value"]
    if kind == "interval":
        years = _years_from_attributes(attributes, _TIME_ATTR_HINTS)
        if not years:
            return None
        lo, hi = value
        return any(lo <= y <= hi for y in years)
    if kind == "region_hint":
        texts = _values_for_hints(attributes, _LOCATION_ATTR_HINTS)
        if not texts:
            return None
        return any(canonical_key(value) in canonical_key(t) for t in texts)
    if kind == "category":
        texts = _values_for_hints(attributes, _TYPE_ATTR_HINTS)
        if not texts:
            return None
        return any(
            value in canonical_key(t) or canonical_key(t) in value for t in texts
        )
    # generic attribute ("text"): match the predicate field against attribute keys
    field_canon = canonical_key(predicate.field)
    matches = [
        v for k, v in attributes.items()
        if field_canon in canonical_key(k) or canonical_key(k) in field_canon
    ]
    if not matches:
        return None
    if predicate.operator == "equals":
        return any(canonical_key(v) == value for v in matches)
    return any(value in canonical_key(v) or canonical_key(v) in value for v in matches)


def _years_from_attributes(attributes: dict[str, str], hints: tuple[str, ...]) -> list[int]:
    years = []
    for key, value in attributes.items():
        key_canon = canonical_key(key)
        if any(h in key_canon for h in hints):
            years.extend(int(m.group(0)) for m in _YEAR_IN_TEXT_RE.finditer(value))
    return years


def _values_for_hints(attributes: dict[str, str], hints: tuple[str, ...]) -> list[str]:
    return [v for k, v in attributes.items() if any(h in canonical_key(k) for h in hints)]


def recompute_decision(report_obj: dict) -> str:
    """Re-derive the decision from a serialized report's recorded scores.

    Used to assert report integrity: the stored decision must equal what the
    recorded structure flag, vote, and per-candidate scores imply.
    """
    if not report_obj["structure"]["pass"]:
        return DECISION_REJECTED
    vote = report_obj["vote"]
    if vote is None:
        return DECISION_REJECTED
    if vote["accepted"]:
        return DECISION_VOTE
    candidates = report_obj["candidates"]
    if not candidates:
        return DECISION_REJECTED
    seed = candidates[0]
    if seed["screened_out"]:
        return DECISION_REJECTED
    survivors = [c for c in candidates if not c["screened_out"]]
    explicit_present = any(p["normalized"] is not None for p in report_obj["predicates"])
    if explicit_present:
        others_best = max((c["s_exp"] for c in survivors[1:]), default=None)
        if others_best is None or seed["s_exp"] > others_best:
            return DECISION_SCREENING
    if seed["eliminated_by"] is not None or seed["s_norm"] is None:
        return DECISION_REJECTED
    rival_scores = [
        c["s_norm"] for c in survivors[1:] if c["eliminated_by"] is None and c["s_norm"] is not None
    ]
    best_rival = max(rival_scores, default=None)
    if best_rival is not None and seed["s_norm"] <= best_rival:
        return DECISION_REJECTED
    return DECISION_MATCHING
