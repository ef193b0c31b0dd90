"""Layered evidence-graph growth by controlled breadth-first expansion.

Each frontier node samples candidates from its own page (70% by in-page
mention frequency, 30% seeded-random), classifies the parent-candidate
relation via NLI, scores survivors with a diversity-aware composite, and
greedily keeps the top-K. Graphs are acyclic by construction: a candidate
already present anywhere in the graph is never re-added.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

from .errors import HopforgeError
from .nodes import CandidateEntity, NodeBuilder
from .relations import Direction, EntityRef, RelationEngine, RelationJudgment, RelationType, select_premises
from .store import CorpusStore, PageRecord
from .textutil import canonical_key, trigram_similarity

logger = logging.getLogger(__name__)

HIGH_FREQUENCY_SHARE = 0.7
DEFAULT_POOL_FACTOR = 3
SEED_NODE_TYPE = "seed"


@dataclass(frozen=True)
class ExpansionStrategy:
    """branching[d] = children taken per frontier node at depth d+1."""

    branching: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.branching:
            raise ValueError("strategy must name at least one layer")
        if any(b < 1 for b in self.branching):
            raise ValueError("branching factors must all be >= 1")

    @classmethod
    def of(cls, branching: list[int] | tuple[int, ...]) -> "ExpansionStrategy":
        return cls(tuple(int(b) for b in branching))


@dataclass(frozen=True)
class ScoreWeights:
    w_conf: float = 0.6
    w_rel: float = 0.2
    w_sem: float = 0.15
    w_par: float = 0.05

    def __post_init__(self) -> None:
        weights = (self.w_conf, self.w_rel, self.w_sem, self.w_par)
        if any(w < 0 for w in weights):
            raise ValueError("weights must be non-negative")
        if not sum(weights) > 0:
            raise ValueError("at least one weight must be positive")


@dataclass
class GraphNode:
    id: int
    title: str
    type: str
    depth: int
    attributes: dict[str, str] = field(default_factory=dict)


@dataclass
class GraphEdge:
    parent_id: int
    child_id: int
    relation: RelationType
    direction: Direction
    confidence: float
    evidence_passage: str


@dataclass
class EvidenceGraph:
    seed_id: int
    nodes: list[GraphNode] = field(default_factory=list)
    edges: list[GraphEdge] = field(default_factory=list)

    def node_by_id(self, node_id: int) -> GraphNode:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise KeyError(node_id)

    def parent_edge(self, node_id: int) -> GraphEdge | None:
        for edge in self.edges:
            if edge.child_id == node_id:
                return edge
        return None

    def nodes_at_depth(self, depth: int) -> list[GraphNode]:
        return [n for n in self.nodes if n.depth == depth]

    def path_to_seed(self, node_id: int) -> list[int]:
        """Node ids from the given node up to and including the seed."""
        path = [node_id]
        while True:
            edge = self.parent_edge(path[-1])
            if edge is None:
                break
            path.append(edge.parent_id)
        return path

    def validate(self) -> None:
        titles = [canonical_key(n.title) for n in self.nodes]
        if len(titles) != len(set(titles)):
            raise HopforgeError("duplicate node titles in graph")
        by_id = {n.id: n for n in self.nodes}
        roots = [n for n in self.nodes if self.parent_edge(n.id) is None]
        if [r.depth for r in roots] != [0]:
            raise HopforgeError("graph must have exactly one root at depth 0")
        for edge in self.edges:
            parent, child = by_id[edge.parent_id], by_id[edge.child_id]
            if child.depth != parent.depth + 1:
                raise HopforgeError(f"edge {edge.parent_id}->{edge.child_id} breaks depth consistency")
            if edge.child_id in self.path_to_seed(edge.parent_id):
                raise HopforgeError("cycle detected")

    # -- serialization ------------------------------------------------

    def to_json_obj(self) -> dict:
        return {
            "seed_id": self.seed_id,
            "nodes": [
                {
                    "id": n.id,
                    "title": n.title,
                    "type": n.type,
                    "depth": n.depth,
                    "attributes": dict(sorted(n.attributes.items())),
                }
                for n in sorted(self.nodes, key=lambda n: n.id)
            ],
            "edges": [
                {
                    "parent": e.parent_id,
                    "child": e.child_id,
                    "relation": e.relation.value,
                    "direction": e.direction.value,
                    "confidence": e.confidence,
                    "evidence": e.evidence_passage,
                }
                for e in sorted(self.edges, key=lambda e: (e.parent_id, e.child_id))
            ],
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "EvidenceGraph":
        graph = cls(seed_id=obj["seed_id"])
        graph.nodes = [
            GraphNode(
                id=n["id"],
                title=n["title"],
                type=n["type"],
                depth=n["depth"],
                attributes=dict(n.get("attributes", {})),
            )
            for n in obj["nodes"]
        ]
        graph.edges = [
            GraphEdge(
                parent_id=e["parent"],
                child_id=e["child"],
                relation=RelationType(e["relation"]),
                direction=Direction(e["direction"]),
                confidence=e["confidence"],
                evidence_passage=e["evidence"],
            )
            for e in obj["edges"]
        ]
        return graph


def export_graph(graph: EvidenceGraph, fmt: str) -> bytes:
    """Loss-free JSON or a DOT rendering with one labeled line per edge."""
    if fmt == "json":
        text = json.dumps(graph.to_json_obj(), sort_keys=True, indent=2, ensure_ascii=False)
        return (text + "\n").encode("utf-8")
    if fmt == "dot":
        lines = ["digraph evidence {"]
        for node in sorted(graph.nodes, key=lambda n: n.id):
            suffix = " (seed)" if node.id == graph.seed_id else ""
            lines.append(f'  n{node.id} [label="{_dot_escape(node.title)}{suffix}"];')
        for edge in sorted(graph.edges, key=lambda e: (e.parent_id, e.child_id)):
            label = f"{edge.relation.value} ({edge.confidence:.2f})"
            lines.append(f'  n{edge.parent_id} -> n{edge.child_id} [label="{label}"];')
        lines.append("}")
        return ("\n".join(lines) + "\n").encode("utf-8")
    raise ValueError(f"unknown export format {fmt!r}; expected json or dot")


def graph_from_json(data: bytes | str) -> EvidenceGraph:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return EvidenceGraph.from_json_obj(json.loads(data))


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


@dataclass
class LayerState:
    """Diversity bookkeeping for the layer being filled; reset per layer."""

    selected_relations: Counter = field(default_factory=Counter)
    selected_titles: list[str] = field(default_factory=list)
    selected_paragraph_indices: set[int] = field(default_factory=set)

    def record(self, judgment: RelationJudgment, candidate: CandidateEntity) -> None:
        self.selected_relations[judgment.relation] += 1
        self.selected_titles.append(candidate.title)
        self.selected_paragraph_indices.add(candidate.evidence.paragraph_index)


def derive_rng_seed(rng_seed: int, tag: str) -> int:
    """Stable per-node RNG seed; independent of process hash randomization."""
    digest = hashlib.sha256(f"{rng_seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def embedding_similarity(gateway) -> Callable[[str, str], float]:
    """Cosine over gateway embeddings, the online alternative to trigram Jaccard.

    Vectors arrive unit-norm, so cosine is a dot product; clamped to [0, 1]
    to keep the semantic-diversity term in range.
    """

    def similarity(a: str, b: str) -> float:
        va, vb = gateway.embed([a, b])
        return max(0.0, min(1.0, sum(x * y for x, y in zip(va, vb))))

    return similarity


class GraphExpander:
    def __init__(
        self,
        store: CorpusStore,
        node_builder: NodeBuilder,
        relation_engine: RelationEngine,
        weights: ScoreWeights | None = None,
        pool_factor: int = DEFAULT_POOL_FACTOR,
        similarity_fn: Callable[[str, str], float] | None = None,
    ) -> None:
        self.store = store
        self.node_builder = node_builder
        self.relation_engine = relation_engine
        self.weights = weights or ScoreWeights()
        self.pool_factor = pool_factor
        self.similarity_fn = similarity_fn or trigram_similarity
        self._candidate_cache: dict[str, list[CandidateEntity]] = {}
        self.judgment_log: list[dict] = []

    # -- candidate supply ----------------------------------------------

    def candidates_for(self, page: PageRecord) -> list[CandidateEntity]:
        key = canonical_key(page.title)
        if key not in self._candidate_cache:
            self._candidate_cache[key] = self.node_builder.build_candidates(page)
        return self._candidate_cache[key]

    def sample_candidates(
        self, page: PageRecord, existing: set[str], pool_size: int, rng_seed: int
    ) -> list[CandidateEntity]:
        """70% highest-mention-frequency candidates, rest seeded-random.

        ``existing`` holds canonical titles already in the graph; those are
        excluded up front to avoid cycles. Returns fewer when supply is short.
        """
        available = [
            c for c in self.candidates_for(page) if canonical_key(c.title) not in existing
        ]
        available.sort(key=lambda c: (-c.mention_frequency, canonical_key(c.title)))
        n_top = math.ceil(HIGH_FREQUENCY_SHARE * pool_size)
        top, rest = available[:n_top], available[n_top:]
        n_random = min(pool_size - len(top), len(rest))
        if n_random <= 0:
            return top
        rng = random.Random(rng_seed)
        return top + rng.sample(rest, n_random)

    # -- scoring --------------------------------------------------------

    def score_candidate(
        self,
        judgment: RelationJudgment,
        candidate: CandidateEntity,
        layer: LayerState,
        weights: ScoreWeights | None = None,
    ) -> float:
        """Composite of NLI confidence and three diversity terms, each in [0,1]."""
        w = weights or self.weights
        rel_div = 1.0 / (1.0 + layer.selected_relations[judgment.relation])
        if layer.selected_titles:
            sem_div = 1.0 - max(
                self.similarity_fn(candidate.title, t) for t in layer.selected_titles
            )
        else:
            sem_div = 1.0
        par_div = (
            1.0
            if candidate.evidence.paragraph_index not in layer.selected_paragraph_indices
            else 0.0
        )
        return (
            w.w_conf * judgment.confidence
            + w.w_rel * rel_div
            + w.w_sem * sem_div
            + w.w_par * par_div
        )

    # -- expansion -------------------------------------------------------

    def expand(
        self,
        seed_title: str,
        strategy: ExpansionStrategy,
        rng_seed: int,
        weights: ScoreWeights | None = None,
    ) -> EvidenceGraph:
        """Grow the layered graph for a seed; deterministic given fixed inputs."""
        weights = weights or self.weights
        seed_page = self.store.get_page(seed_title)
        graph = EvidenceGraph(seed_id=0)
        graph.nodes.append(
            GraphNode(
                id=0,
                title=seed_page.title,
                type=SEED_NODE_TYPE,
                depth=0,
                attributes=dict(seed_page.attributes),
            )
        )
        existing = {canonical_key(seed_page.title)}
        frontier = [graph.nodes[0]]
        next_id = 1
        for depth_index, k in enumerate(strategy.branching):
            depth = depth_index + 1
            layer = LayerState()
            next_frontier: list[GraphNode] = []
            for node in frontier:
                page = self.store.get_page(node.title)
                picks = self._expand_node(node, page, k, existing, layer, weights, rng_seed)
                for candidate, judgment, _score in picks:
                    child = GraphNode(
                        id=next_id,
                        title=candidate.title,
                        type=candidate.entity_label,
                        depth=depth,
                    )
                    next_id += 1
                    graph.nodes.append(child)
                    graph.edges.append(
                        GraphEdge(
                            parent_id=node.id,
                            child_id=child.id,
                            relation=judgment.relation,
                            direction=judgment.direction,
                            confidence=judgment.confidence,
                            evidence_passage=judgment.premise,
                        )
                    )
                    existing.add(canonical_key(candidate.title))
                    layer.record(judgment, candidate)
                    next_frontier.append(child)
            if not next_frontier:
                break
            frontier = next_frontier
        graph.validate()
        return graph

    def _expand_node(
        self,
        node: GraphNode,
        page: PageRecord,
        k: int,
        existing: set[str],
        layer: LayerState,
        weights: ScoreWeights,
        rng_seed: int,
    ) -> list[tuple[CandidateEntity, RelationJudgment, float]]:
        """Sample, judge, score, and greedily keep the top-k for one frontier node."""
        node_seed = derive_rng_seed(rng_seed, canonical_key(node.title))
        pool = self.sample_candidates(page, existing, self.pool_factor * k, node_seed)
        doc = self.node_builder.preprocess(page)
        parent_ref = EntityRef.from_page(page)
        scored: list[tuple[float, str, CandidateEntity, RelationJudgment]] = []
        for candidate in pool:
            candidate_ref = self._candidate_ref(candidate)
            premises = select_premises(doc, parent_ref, candidate_ref)
            judgment = self.relation_engine.classify_relation(premises, parent_ref, candidate_ref)
            self.judgment_log.append(_judgment_record(node.title, candidate.title, judgment))
            if judgment is None:
                continue
            score = self.score_candidate(judgment, candidate, layer, weights)
            scored.append((score, canonical_key(candidate.title), candidate, judgment))
        scored.sort(key=lambda t: (-t[0], t[1]))
        return [(candidate, judgment, score) for score, _, candidate, judgment in scored[:k]]

    def _candidate_ref(self, candidate: CandidateEntity) -> EntityRef:
        try:
            page = self.store.get_page(candidate.title)
            aliases = tuple(sorted(page.aliases))
        except Exception:
            aliases = ()
        return EntityRef(title=candidate.title, aliases=aliases, anchor_text=candidate.anchor_text)


def _judgment_record(parent: str, candidate: str, judgment: RelationJudgment | None) -> dict:
    if judgment is None:
        return {"parent": parent, "candidate": candidate, "accepted": False}
    return {
        "parent": parent,
        "candidate": candidate,
        "accepted": True,
        "relation": judgment.relation.value,
        "direction": judgment.direction.value,
        "confidence": judgment.confidence,
        "premise": judgment.premise,
        "hypothesis": judgment.winning_hypothesis,
    }
