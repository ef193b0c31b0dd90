"""Zero-shot relation typing between entity pairs via NLI entailment.

A premise sentence mentioning both entities is tested against templated
hypotheses for six logical relation types, instantiated in both directions.
The winning entailment probability becomes the edge confidence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .gateway import ModelGateway
from .store import PageRecord
from .textutil import find_term, split_sentences

logger = logging.getLogger(__name__)

DEFAULT_NLI_THRESHOLD = 0.45
PREMISE_MAX_CHARS = 512


class RelationType(str, Enum):
    CAUSES = "causes"
    PART_OF = "part_of"
    IS_A = "is_a"
    HAS_ATTRIBUTE = "has_attribute"
    REQUIRES = "requires"
    USED_FOR = "used_for"


class Direction(str, Enum):
    FORWARD = "forward"   # U -> V
    BACKWARD = "backward"  # V -> U


# Hypothesis templates per relation type; {U} is the parent entity and {V}
# the candidate. Config-extensible: pass a custom mapping to the engine.
RELATION_TEMPLATES: dict[RelationType, tuple[str, ...]] = {
    RelationType.CAUSES: (
        "{U} causes {V}",
        "{U} leads to {V}",
        "{U} induces {V}",
    ),
    RelationType.PART_OF: (
        "{U} is part of {V}",
        "{U} belongs to {V}",
        "{U} is a component of {V}",
    ),
    RelationType.IS_A: (
        "{U} is a kind of {V}",
        "{U} is a type of {V}",
        "{U} is an instance of {V}",
    ),
    RelationType.HAS_ATTRIBUTE: (
        "{U} has attribute {V}",
        "{U} has property {V}",
        "{U} is characterized by {V}",
    ),
    RelationType.REQUIRES: (
        "{U} requires {V}",
        "{U} needs {V}",
        "{U} depends on {V}",
    ),
    RelationType.USED_FOR: (
        "{U} is used for {V}",
        "{U} is used to access {V}",
        "{U} serves the purpose of {V}",
    ),
}


@dataclass(frozen=True)
class EntityRef:
    """Surface forms an entity can appear under in running text."""

    title: str
    aliases: tuple[str, ...] = ()
    anchor_text: str | None = None

    @classmethod
    def from_page(cls, page: PageRecord) -> "EntityRef":
        return cls(title=page.title, aliases=tuple(sorted(page.aliases)))

    def surface_forms(self) -> list[str]:
        forms = [self.title, *self.aliases]
        if self.anchor_text and self.anchor_text not in forms:
            forms.append(self.anchor_text)
        return forms


@dataclass(frozen=True)
class Hypothesis:
    relation: RelationType
    direction: Direction
    template_index: int
    text: str


@dataclass(frozen=True)
class RelationJudgment:
    relation: RelationType
    direction: Direction
    confidence: float
    premise: str
    winning_hypothesis: str


def generate_hypotheses(
    u: str,
    v: str,
    templates: dict[RelationType, tuple[str, ...]] | None = None,
) -> list[Hypothesis]:
    """All templates instantiated both ways, in a fixed deterministic order.

    Order: relation types as declared, then template order, then forward
    before backward. With the default three templates per type this yields
    6 x 3 x 2 = 36 hypotheses.
    """
    if not u or not v:
        raise ValueError("entity titles must be non-empty")
    templates = templates or RELATION_TEMPLATES
    out: list[Hypothesis] = []
    for relation in RelationType:
        for i, tpl in enumerate(templates[relation]):
            out.append(Hypothesis(relation, Direction.FORWARD, i, tpl.format(U=u, V=v)))
            out.append(Hypothesis(relation, Direction.BACKWARD, i, tpl.format(U=v, V=u)))
    return out


def _mentions(sentence: str, forms: Sequence[str]) -> int:
    """Earliest match position of any surface form, or -1."""
    positions = [p for p in (find_term(sentence, f) for f in forms) if p >= 0]
    return min(positions) if positions else -1


def _truncate_premise(sentence: str, pos_u: int, pos_v: int, max_chars: int) -> str:
    if len(sentence) <= max_chars:
        return sentence
    lo, hi = min(pos_u, pos_v), max(pos_u, pos_v)
    span = hi - lo
    if span >= max_chars:
        return sentence[lo : lo + max_chars]
    margin = (max_chars - span) // 2
    start = max(0, lo - margin)
    return sentence[start : start + max_chars]


def select_premises(
    doc: Sequence[str],
    u: EntityRef,
    v: EntityRef,
    max_chars: int = PREMISE_MAX_CHARS,
) -> list[str]:
    """Sentences mentioning at least one surface form of each entity, in document order.

    ``doc`` is a CleanDocument or any sequence of paragraph texts.
    """
    texts = doc.paragraph_texts() if hasattr(doc, "paragraph_texts") else list(doc)
    premises = []
    u_forms, v_forms = u.surface_forms(), v.surface_forms()
    for text in texts:
        for sentence in split_sentences(text):
            pos_u = _mentions(sentence, u_forms)
            pos_v = _mentions(sentence, v_forms)
            if pos_u >= 0 and pos_v >= 0:
                premises.append(_truncate_premise(sentence, pos_u, pos_v, max_chars))
    return premises


class RelationEngine:
    """Scores relation hypotheses over premises and keeps the best judged edge."""

    def __init__(
        self,
        gateway: ModelGateway,
        nli_threshold: float = DEFAULT_NLI_THRESHOLD,
        templates: dict[RelationType, tuple[str, ...]] | None = None,
    ) -> None:
        self.gateway = gateway
        self.nli_threshold = nli_threshold
        self.templates = templates or RELATION_TEMPLATES

    def classify_relation(
        self, premises: Sequence[str], u: EntityRef, v: EntityRef
    ) -> RelationJudgment | None:
        """Global argmax over (premise, relation, direction); templates aggregate by max.

        Ties break by relation declaration order, then forward before
        backward, then the earlier premise, so graphs are reproducible.
        Returns None when no score reaches the threshold or no premises exist.
        """
        if not premises:
            return None
        hypotheses = generate_hypotheses(u.title, v.title, self.templates)
        relation_order = {r: i for i, r in enumerate(RelationType)}
        direction_order = {Direction.FORWARD: 0, Direction.BACKWARD: 1}
        best: tuple[float, int, int, int] | None = None
        best_payload: tuple[str, Hypothesis, float] | None = None
        for p_idx, premise in enumerate(premises):
            scores = self.gateway.nli(premise, [h.text for h in hypotheses])
            grouped: dict[tuple[RelationType, Direction], tuple[float, Hypothesis]] = {}
            for hyp, score in zip(hypotheses, scores):
                key = (hyp.relation, hyp.direction)
                if key not in grouped or score > grouped[key][0]:
                    grouped[key] = (score, hyp)
            for (relation, direction), (score, hyp) in grouped.items():
                rank = (-score, relation_order[relation], direction_order[direction], p_idx)
                if best is None or rank < best:
                    best = rank
                    best_payload = (premise, hyp, score)
        assert best_payload is not None
        premise, hyp, score = best_payload
        if score < self.nli_threshold:
            return None
        return RelationJudgment(
            relation=hyp.relation,
            direction=hyp.direction,
            confidence=score,
            premise=premise,
            winning_hypothesis=hyp.text,
        )
