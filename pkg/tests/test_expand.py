import json

import pytest

from hopforge.errors import PageNotFoundError
from hopforge.expand import (
    EvidenceGraph,
    ExpansionStrategy,
    GraphExpander,
    LayerState,
    ScoreWeights,
    export_graph,
    graph_from_json,
)
from hopforge.gateway import EndpointConfig, MockGateway, MockScript
from hopforge.nodes import CandidateEntity, EvidenceParagraph, NodeBuilder
from hopforge.relations import Direction, RelationEngine, RelationJudgment, RelationType
from hopforge.store import CorpusStore


def page(title, paragraphs, links=(), aliases=(), attributes=None):
    return json.dumps(
        {
            "title": title,
            "aliases": list(aliases),
            "sections": [{"name": "Lead", "paragraphs": list(paragraphs)}],
            "links": [
                {"anchor": a, "target": t, "paragraph": p} for a, t, p in links
            ],
            "attributes": attributes or {},
        }
    )


MINI_CORPUS = [
    page(
        "Japan Airlines",
        [
            "Japan Airlines flies from Tokyo. Japan Airlines competes with All Nippon Airways. "
            "Japan Airlines featured Shingo Katori on a livery."
        ],
        links=[
            ("Tokyo", "Tokyo", 0),
            ("Tokyo", "Tokyo", 0),
            ("All Nippon Airways", "All Nippon Airways", 0),
            ("Shingo Katori", "Shingo Katori", 0),
        ],
        aliases=["JAL"],
        attributes={"founding year": "1951", "alliance": "Oneworld"},
    ),
    page(
        "Shingo Katori",
        ["Shingo Katori is a member of SMAP."],
        links=[("SMAP", "SMAP", 0)],
    ),
    page(
        "Tokyo",
        ["Tokyo hosts Haneda Airport."],
        links=[("Haneda Airport", "Haneda Airport", 0)],
    ),
    page("All Nippon Airways", ["All Nippon Airways stub."]),
    page("SMAP", ["SMAP stub."]),
    page("Haneda Airport", ["Haneda Airport stub."]),
]

NER_SPANS = [
    {"anchor": "Tokyo", "label": "location", "score": 0.90},
    {"anchor": "All Nippon Airways", "label": "organization", "score": 0.90},
    {"anchor": "Shingo Katori", "label": "person", "score": 0.90},
    {"anchor": "SMAP", "label": "organization", "score": 0.90},
    {"anchor": "Haneda Airport", "label": "location", "score": 0.90},
]


def by_hyp(pairs, default=0.10):
    return {"by_hypothesis": [{"contains": c, "score": s} for c, s in pairs], "default": default}


def mini_nli_rules():
    return [
        ({"premise_contains": "flies from Tokyo"},
         by_hyp([("Japan Airlines has attribute Tokyo", 0.80)])),
        ({"premise_contains": "competes with All Nippon Airways"},
         by_hyp([("Japan Airlines is a kind of All Nippon Airways", 0.70)])),
        ({"premise_contains": "featured Shingo Katori"},
         by_hyp([("Shingo Katori has attribute Japan Airlines", 0.92)])),
        ({"premise_contains": "member of SMAP"},
         by_hyp([("Shingo Katori is part of SMAP", 0.66)])),
        ({"premise_contains": "hosts Haneda Airport"},
         by_hyp([("Tokyo has attribute Haneda Airport", 0.55)])),
    ]


def make_expander(tmp_path, nli_rules=None, default_nli=0.10, **kwargs):
    store = CorpusStore(tmp_path / "mini.db")
    result = store.ingest_corpus(MINI_CORPUS)
    assert not result.errors
    script = MockScript(default_policy="error")
    script.add_rule("ner", {}, {"spans_for": NER_SPANS})
    for when, respond in nli_rules if nli_rules is not None else mini_nli_rules():
        script.add_rule("nli", when, respond)
    script.add_rule("nli", {}, by_hyp([], default=default_nli))
    gateway = MockGateway(script, EndpointConfig(base_url="mock://", max_retries=0))
    builder = NodeBuilder(store, gateway)
    engine = RelationEngine(gateway)
    return GraphExpander(store, builder, engine, **kwargs), store


def candidate(title, frequency, paragraph_index=0):
    return CandidateEntity(
        title=title,
        entity_label="organization",
        ner_score=0.9,
        mention_frequency=frequency,
        evidence=EvidenceParagraph("Seed", paragraph_index, f"Seed mentions {title}."),
        anchor_text=title,
    )


def judgment(relation=RelationType.HAS_ATTRIBUTE, confidence=0.8):
    return RelationJudgment(
        relation=relation,
        direction=Direction.FORWARD,
        confidence=confidence,
        premise="p",
        winning_hypothesis="h",
    )


# -- types ------------------------------------------------------------------


def test_strategy_validation():
    with pytest.raises(ValueError):
        ExpansionStrategy.of([])
    with pytest.raises(ValueError):
        ExpansionStrategy.of([0])
    assert ExpansionStrategy.of([4, 2, 2]).branching == (4, 2, 2)


def test_weights_validation():
    with pytest.raises(ValueError):
        ScoreWeights(-0.1, 0, 0, 0)
    with pytest.raises(ValueError):
        ScoreWeights(0, 0, 0, 0)


# -- sample_candidates ----------------------------------------------------------


class StubExpander(GraphExpander):
    """Expander with an injected candidate pool, no gateway involved."""

    def __init__(self, pool):
        self._pool = pool
        self.pool_factor = 3

    def candidates_for(self, page):
        return self._pool


class FakePage:
    title = "Seed"


def test_sample_supply_equals_demand_returns_all():
    pool = [candidate(f"T{i:02d}", i) for i in range(10)]
    out = StubExpander(pool).sample_candidates(FakePage(), set(), 10, rng_seed=1)
    assert {c.title for c in out} == {c.title for c in pool}


def test_sample_split_70_30():
    pool = [candidate(f"T{i:02d}", i) for i in range(20)]
    out = StubExpander(pool).sample_candidates(FakePage(), set(), 10, rng_seed=42)
    assert len(out) == 10
    top = out[:7]
    # ceil(0.7 * 10) = 7 highest-frequency candidates, ties by title
    assert [c.title for c in top] == ["T19", "T18", "T17", "T16", "T15", "T14", "T13"]
    rest = out[7:]
    assert len(rest) == 3
    assert all(c.mention_frequency <= 12 for c in rest)


def test_sample_random_tail_is_seeded():
    pool = [candidate(f"T{i:02d}", i) for i in range(20)]
    a = StubExpander(pool).sample_candidates(FakePage(), set(), 10, rng_seed=42)
    b = StubExpander(pool).sample_candidates(FakePage(), set(), 10, rng_seed=42)
    c = StubExpander(pool).sample_candidates(FakePage(), set(), 10, rng_seed=43)
    assert [x.title for x in a] == [x.title for x in b]
    assert [x.title for x in a] != [x.title for x in c]


def test_sample_excludes_existing_titles():
    pool = [candidate(f"T{i:02d}", i) for i in range(5)]
    existing = {f"t{i:02d}" for i in range(5)}
    assert StubExpander(pool).sample_candidates(FakePage(), existing, 10, rng_seed=1) == []


# -- score_candidate ------------------------------------------------------------


def test_degenerate_weights_reduce_to_confidence():
    expander = StubExpander([])
    expander.similarity_fn = lambda a, b: 0.0
    score = expander.score_candidate(
        judgment(confidence=0.73), candidate("X", 1), LayerState(), ScoreWeights(1, 0, 0, 0)
    )
    assert score == 0.73


def test_empty_layer_diversity_maxima():
    expander = StubExpander([])
    expander.similarity_fn = lambda a, b: 0.0
    score = expander.score_candidate(
        judgment(), candidate("X", 1), LayerState(), ScoreWeights(0, 1, 1, 1)
    )
    assert score == 3.0


def test_repeated_relation_penalty():
    expander = StubExpander([])
    expander.similarity_fn = lambda a, b: 0.0
    layer = LayerState()
    layer.record(judgment(RelationType.HAS_ATTRIBUTE), candidate("A", 1, paragraph_index=1))
    layer.record(judgment(RelationType.HAS_ATTRIBUTE), candidate("B", 1, paragraph_index=2))
    score = expander.score_candidate(
        judgment(RelationType.HAS_ATTRIBUTE), candidate("C", 1, paragraph_index=3),
        layer, ScoreWeights(0, 1, 0, 0),
    )
    assert score == pytest.approx(1 / 3)


# -- expand -----------------------------------------------------------------------


EXPECTED_MINI = {
    "nodes": [
        (0, "Japan Airlines", "seed", 0),
        (1, "Shingo Katori", "person", 1),
        (2, "Tokyo", "location", 1),
        (3, "SMAP", "organization", 2),
        (4, "Haneda Airport", "location", 2),
    ],
    "edges": [
        (0, 1, "has_attribute", "backward", 0.92),
        (0, 2, "has_attribute", "forward", 0.80),
        (1, 3, "part_of", "forward", 0.66),
        (2, 4, "has_attribute", "forward", 0.55),
    ],
}


def test_expand_strategy_2_1_matches_hand_simulation(tmp_path):
    """Expected sets hand-derived from the scripted score table.

    Depth 1 (empty layer, all diversity terms maximal): Katori 0.952,
    Tokyo 0.880, ANA 0.820 with default weights; top-2 taken. Depth 2:
    one child each for Katori and Tokyo.
    """
    expander, _ = make_expander(tmp_path)
    graph = expander.expand("Japan Airlines", ExpansionStrategy.of([2, 1]), rng_seed=0)
    nodes = [(n.id, n.title, n.type, n.depth) for n in graph.nodes]
    edges = [
        (e.parent_id, e.child_id, e.relation.value, e.direction.value, e.confidence)
        for e in graph.edges
    ]
    assert nodes == EXPECTED_MINI["nodes"]
    assert edges == EXPECTED_MINI["edges"]
    assert len(graph.nodes) <= 5
    assert {n.depth for n in graph.nodes} == {0, 1, 2}


def test_expand_seed_attributes_enriched_at_depth0(tmp_path):
    expander, _ = make_expander(tmp_path)
    graph = expander.expand("Japan Airlines", ExpansionStrategy.of([2]), rng_seed=0)
    assert graph.node_by_id(0).attributes == {"founding year": "1951", "alliance": "Oneworld"}


def test_expand_depth1_layer_never_exceeds_branching(tmp_path):
    expander, _ = make_expander(tmp_path)
    graph = expander.expand("Japan Airlines", ExpansionStrategy.of([4, 2, 2]), rng_seed=0)
    for depth, bound in ((1, 4), (2, 8), (3, 16)):
        assert len(graph.nodes_at_depth(depth)) <= bound


def test_expand_no_candidate_above_threshold_gives_seed_only(tmp_path):
    expander, _ = make_expander(tmp_path, nli_rules=[], default_nli=0.30)
    graph = expander.expand("Japan Airlines", ExpansionStrategy.of([2, 1]), rng_seed=0)
    assert len(graph.nodes) == 1
    assert graph.edges == []


def test_expand_unknown_seed_not_found(tmp_path):
    expander, _ = make_expander(tmp_path)
    with pytest.raises(PageNotFoundError):
        expander.expand("Nope", ExpansionStrategy.of([2]), rng_seed=0)


def test_expand_edge_confidences_meet_threshold_and_relations_typed(tmp_path):
    expander, _ = make_expander(tmp_path)
    graph = expander.expand("Japan Airlines", ExpansionStrategy.of([3, 1]), rng_seed=0)
    for edge in graph.edges:
        assert edge.confidence >= 0.45
        assert isinstance(edge.relation, RelationType)


def test_expand_no_duplicate_titles_and_acyclic(tmp_path):
    expander, _ = make_expander(tmp_path)
    graph = expander.expand("Japan Airlines", ExpansionStrategy.of([3, 2, 2]), rng_seed=0)
    titles = [n.title for n in graph.nodes]
    assert len(titles) == len(set(titles))
    graph.validate()  # raises on cycles or depth inconsistencies


def test_expand_greedy_matches_brute_force_sort_per_frontier_node(tmp_path):
    """Oracle: depth-1 selection equals an independent score-sort of every
    judged candidate of the seed page."""
    expander, store = make_expander(tmp_path)
    graph = expander.expand("Japan Airlines", ExpansionStrategy.of([2]), rng_seed=0)

    oracle_expander, _ = make_expander(tmp_path.joinpath("oracle"))
    seed_page = oracle_expander.store.get_page("Japan Airlines")
    doc = oracle_expander.node_builder.preprocess(seed_page)
    from hopforge.relations import EntityRef, select_premises

    parent = EntityRef.from_page(seed_page)
    rows = []
    for cand in oracle_expander.candidates_for(seed_page):
        ref = EntityRef(title=cand.title, anchor_text=cand.anchor_text)
        j = oracle_expander.relation_engine.classify_relation(
            select_premises(doc, parent, ref), parent, ref
        )
        if j is None:
            continue
        # independent scoring: empty first layer makes all diversity terms 1
        score = 0.6 * j.confidence + 0.2 + 0.15 + 0.05
        rows.append((-score, cand.title.casefold(), cand.title))
    expected = [title for _, _, title in sorted(rows)[:2]]
    assert [n.title for n in graph.nodes_at_depth(1)] == expected


def test_expand_byte_identical_across_runs(tmp_path):
    exports = []
    for i in range(3):
        expander, _ = make_expander(tmp_path / f"run{i}")
        graph = expander.expand("Japan Airlines", ExpansionStrategy.of([2, 1]), rng_seed=7)
        exports.append(export_graph(graph, "json"))
    assert exports[0] == exports[1] == exports[2]


# -- export ------------------------------------------------------------------------


def test_export_seed_only_graph():
    from hopforge.expand import GraphNode

    graph = EvidenceGraph(seed_id=0, nodes=[GraphNode(0, "Solo", "seed", 0)])
    obj = json.loads(export_graph(graph, "json"))
    assert len(obj["nodes"]) == 1
    assert obj["edges"] == []


def test_export_round_trip_structural_equality(tmp_path):
    expander, _ = make_expander(tmp_path)
    graph = expander.expand("Japan Airlines", ExpansionStrategy.of([2, 1]), rng_seed=0)
    restored = graph_from_json(export_graph(graph, "json"))
    assert restored == graph


def test_export_dot_one_line_per_edge(tmp_path):
    expander, _ = make_expander(tmp_path)
    graph = expander.expand("Japan Airlines", ExpansionStrategy.of([2, 1]), rng_seed=0)
    assert len(graph.edges) == 4
    dot = export_graph(graph, "dot").decode()
    edge_lines = [l for l in dot.splitlines() if "->" in l]
    assert len(edge_lines) == 4
    assert all("label=" in l for l in edge_lines)


def test_export_unknown_format_is_usage_error(tmp_path):
    expander, _ = make_expander(tmp_path)
    graph = expander.expand("Japan Airlines", ExpansionStrategy.of([2]), rng_seed=0)
    with pytest.raises(ValueError):
        export_graph(graph, "yaml")


def test_embedding_similarity_uses_gateway_cosine():
    from hopforge.expand import embedding_similarity

    script = MockScript(default_policy="error")
    script.add_rule("embed", {}, {"dim": 8})
    gateway = MockGateway(script, EndpointConfig(base_url="mock://", max_retries=0))
    similarity = embedding_similarity(gateway)
    assert similarity("Tokyo", "Tokyo") == pytest.approx(1.0)
    other = similarity("Tokyo", "Osaka")
    assert 0.0 <= other < 1.0
