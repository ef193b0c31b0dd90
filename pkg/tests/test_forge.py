import json

import pytest

from hopforge.errors import GenerationError, HardeningError
from hopforge.expand import Direction, EvidenceGraph, GraphEdge, GraphNode, RelationType
from hopforge.forge import (
    QuestionDraft,
    QuestionForge,
    STATUS_DRAFT,
    STATUS_HARDENED,
    STATUS_PROBED,
    STATUS_REJECTED,
    detect_anchors,
    killer_pairs,
)
from hopforge.gateway import EndpointConfig, MockGateway, MockScript
from hopforge.store import CorpusStore


def fixture_store(tmp_path):
    store = CorpusStore(tmp_path / "f.db")
    pages = [
        ("Japan Airlines", ["JAL"]),
        ("Tokyo", []),
        ("Shingo Katori", []),
        ("Haneda Airport", []),
        ("SMAP", []),
    ]
    lines = [
        json.dumps(
            {
                "title": title,
                "aliases": aliases,
                "sections": [{"name": "Lead", "paragraphs": [f"{title} stub paragraph."]}],
                "links": [],
                "attributes": {},
            }
        )
        for title, aliases in pages
    ]
    assert not store.ingest_corpus(lines).errors
    return store


def fixture_graph():
    graph = EvidenceGraph(seed_id=0)
    graph.nodes = [
        GraphNode(0, "Japan Airlines", "seed", 0, {"founding year": "1951"}),
        GraphNode(1, "Tokyo", "location", 1),
        GraphNode(2, "Shingo Katori", "person", 1),
        GraphNode(3, "Haneda Airport", "location", 2),
        GraphNode(4, "SMAP", "organization", 2),
    ]
    graph.edges = [
        GraphEdge(0, 1, RelationType.HAS_ATTRIBUTE, Direction.FORWARD, 0.8, "JAL flies from Tokyo."),
        GraphEdge(0, 2, RelationType.HAS_ATTRIBUTE, Direction.BACKWARD, 0.92, "JAL featured Shingo Katori."),
        GraphEdge(1, 3, RelationType.HAS_ATTRIBUTE, Direction.FORWARD, 0.55, "Tokyo hosts Haneda Airport."),
        GraphEdge(2, 4, RelationType.PART_OF, Direction.FORWARD, 0.66, "Shingo Katori is in SMAP."),
    ]
    return graph


CLUES = {
    "Tokyo": "an east Asian capital city",
    "Shingo Katori": "a member of a famous pop group featured on an aircraft livery",
    "Haneda Airport": "a major airfield serving that capital",
    "SMAP": "a famous pop group from the same country",
}

COMPOSED = (
    "Seeking a flag carrier that painted a pop idol on its fuselage, "
    "linked to a major airfield serving an east Asian capital; which airline is it?"
)


def clue_rules():
    rules = []
    for title, clue in CLUES.items():
        rules.append(
            (
                "chat",
                {"content_contains": f"ENTITY: {title}\n"},
                {"json": {"clue": clue, "used_attributes": []}},
            )
        )
    return rules


def forge_with(tmp_path, rules, **kwargs):
    store = fixture_store(tmp_path)
    script = MockScript(default_policy="error")
    for op, when, respond in rules:
        script.add_rule(op, when, respond)
    gateway = MockGateway(script, EndpointConfig(base_url="mock://", max_retries=0))
    sink_events = []
    forge = QuestionForge(
        store,
        gateway,
        artifact_sink=lambda name, payload: sink_events.append((name, payload)),
        **kwargs,
    )
    forge.sink_events = sink_events
    return forge


def draft_for(graph, text=COMPOSED, status=STATUS_DRAFT, clue_titles=None):
    titles = clue_titles or ["SMAP", "Haneda Airport", "Tokyo", "Shingo Katori"]
    by_title = {n.title: n for n in graph.nodes}
    from hopforge.forge import ClueSpec

    clues = [
        ClueSpec(node_id=by_title[t].id, depth=by_title[t].depth, oblique_text=CLUES[t])
        for t in titles
    ]
    return QuestionDraft(
        text=text, seed_answer="Japan Airlines", clues=clues,
        status=status, word_count=len(text.split()),
    )


# -- anchors and killer pairs --------------------------------------------------


def test_detect_anchors_finds_years_models_and_names():
    anchors = detect_anchors("the jet was a Boeing 777 delivered in 2003 to Japan")
    assert "Boeing 777" in anchors
    assert "2003" in anchors
    assert "Japan" in anchors


def test_clause_initial_word_not_an_anchor():
    assert detect_anchors("Which carrier owned the jet") == []


def test_killer_pairs_within_one_clause_only():
    pairs = killer_pairs("a Boeing 777 flew to Japan, then it returned")
    assert ("Boeing 777", "Japan") in pairs
    assert killer_pairs("a Boeing 777 flew away, then Japan celebrated") == []


# -- build_clues ------------------------------------------------------------------


def test_build_clues_leaf_first_with_depths(tmp_path):
    forge = forge_with(tmp_path, clue_rules())
    clues = forge.build_clues(fixture_graph())
    assert [c.depth for c in clues] == [2, 2, 1, 1]
    deep = next(c for c in clues if c.node_id == 4)
    assert deep.oblique_text == CLUES["SMAP"]


def test_build_clues_path_graph_orders_leaf_before_parent(tmp_path):
    graph = EvidenceGraph(seed_id=0)
    graph.nodes = [
        GraphNode(0, "Japan Airlines", "seed", 0),
        GraphNode(1, "Tokyo", "location", 1),
        GraphNode(2, "Haneda Airport", "location", 2),
    ]
    graph.edges = [
        GraphEdge(0, 1, RelationType.HAS_ATTRIBUTE, Direction.FORWARD, 0.8, "e1"),
        GraphEdge(1, 2, RelationType.HAS_ATTRIBUTE, Direction.FORWARD, 0.6, "e2"),
    ]
    forge = forge_with(tmp_path, clue_rules())
    clues = forge.build_clues(graph)
    assert [c.node_id for c in clues] == [2, 1]


def test_leaking_clue_regenerated_then_dropped(tmp_path):
    rules = clue_rules()
    # every Tokyo attempt leaks the seed title
    rules = [r for r in rules if "Tokyo" not in r[1]["content_contains"]]
    rules.insert(
        0,
        (
            "chat",
            {"content_contains": "ENTITY: Tokyo\n"},
            {"json": {"clue": "the capital Japan Airlines flies from", "used_attributes": []}},
        ),
    )
    forge = forge_with(tmp_path, rules, retry_limit=2)
    clues = forge.build_clues(fixture_graph())
    assert all(c.node_id != 1 for c in clues)  # Tokyo clue dropped
    assert len(clues) == 3


def test_zero_surviving_clues_is_generation_error(tmp_path):
    leak = {"json": {"clue": "obviously Japan Airlines", "used_attributes": []}}
    forge = forge_with(tmp_path, [("chat", {"content_contains": "TASK: clue"}, leak)], retry_limit=1)
    with pytest.raises(GenerationError):
        forge.build_clues(fixture_graph())


# -- compose_question ----------------------------------------------------------------


def compose_rule(question=COMPOSED):
    return ("chat", {"content_contains": "TARGET: Japan Airlines\n"}, {"json": {"question": question}})


def test_compose_valid_draft(tmp_path):
    forge = forge_with(tmp_path, clue_rules() + [compose_rule()])
    graph = fixture_graph()
    clues = forge.build_clues(graph)
    draft = forge.compose_question(clues, graph)
    assert draft.status == STATUS_DRAFT
    assert draft.seed_answer == "Japan Airlines"
    assert draft.deep_clue_count() >= 2
    assert draft.word_count <= forge.max_words
    assert "japan airlines" not in draft.text.casefold()


def test_compose_insufficient_deep_clues_names_shortfall(tmp_path):
    forge = forge_with(tmp_path, clue_rules() + [compose_rule()])
    graph = fixture_graph()
    shallow = [c for c in forge.build_clues(graph) if c.depth == 1]
    with pytest.raises(ValueError, match="2 deep clues, have 0"):
        forge.compose_question(shallow, graph)


def test_compose_overlong_text_fails_after_retries(tmp_path):
    long_text = "word " * 400
    forge = forge_with(tmp_path, clue_rules() + [compose_rule(long_text)], retry_limit=2)
    graph = fixture_graph()
    clues = forge.build_clues(graph)
    with pytest.raises(GenerationError):
        forge.compose_question(clues, graph)
    assert forge.gateway.calls["chat"] >= 2


# -- obfuscate -------------------------------------------------------------------------


def test_obfuscate_generalizes_years(tmp_path):
    text_in = "An airline painted a jet in 2003 for fans."
    paraphrase = "An airline decorated a jet in the early 21st century for fans."
    rules = [
        (
            "chat",
            {"content_contains": ["TASK: obfuscate", "the early 21st century"]},
            {"json": {"question": paraphrase}},
        )
    ]
    forge = forge_with(tmp_path, rules)
    draft = draft_for(fixture_graph(), text=text_in)
    out = forge.obfuscate(draft)
    assert "2003" not in out.text
    assert "early 21st century" in out.text


def test_anchor_table_replaces_known_phrases(tmp_path):
    forge = forge_with(tmp_path, [])
    tabled = forge._apply_anchor_table("the U.S. Secretary of State spoke in 2003")
    assert tabled == "a North American diplomatic authority spoke in the early 21st century"


def test_obfuscate_without_anchors_keeps_clues_identical(tmp_path):
    paraphrased = "Rephrased question about a mysterious flag carrier?"
    rules = [("chat", {"content_contains": "TASK: obfuscate"}, {"json": {"question": paraphrased}})]
    forge = forge_with(tmp_path, rules)
    draft = draft_for(fixture_graph())
    clues_before = [c.node_id for c in draft.clues]
    out = forge.obfuscate(draft)
    assert out.text == paraphrased
    assert [c.node_id for c in out.clues] == clues_before


def test_obfuscate_reintroducing_alias_fails_after_retries(tmp_path):
    bad = "A question mentioning JAL directly?"
    rules = [("chat", {"content_contains": "TASK: obfuscate"}, {"json": {"question": bad}})]
    forge = forge_with(tmp_path, rules, retry_limit=2)
    with pytest.raises(GenerationError):
        forge.obfuscate(draft_for(fixture_graph()))


def test_obfuscate_requires_draft_status(tmp_path):
    forge = forge_with(tmp_path, [])
    with pytest.raises(ValueError):
        forge.obfuscate(draft_for(fixture_graph(), status=STATUS_PROBED))


# -- probe_solvability --------------------------------------------------------------------


def probe_rules(round_no, answers):
    """One rule per run; a None answer leaves that run unscripted (gateway error)."""
    runs = len(answers)
    return [
        (
            "chat",
            {"content_contains": [f"ROUND: {round_no}\n", f"RUN: {i + 1}/{runs}"]},
            {"json": {"answer": answer}},
        )
        for i, answer in enumerate(answers)
        if answer is not None
    ]


def test_probe_majority_solved(tmp_path):
    answers = ["Japan Airlines", "Japan Airlines", "Japan Airlines", "X", "Y"]
    forge = forge_with(tmp_path, probe_rules(0, answers))
    result = forge.probe_solvability(draft_for(fixture_graph()), runs=5)
    assert result.match_count == 3
    assert result.solved


def test_probe_zero_matches_unsolved(tmp_path):
    forge = forge_with(tmp_path, probe_rules(0, ["X", "Y", "Z"]))
    result = forge.probe_solvability(draft_for(fixture_graph()), runs=3)
    assert result.match_count == 0
    assert not result.solved


def test_probe_alias_canonicalization(tmp_path):
    forge = forge_with(tmp_path, probe_rules(0, ["JAL", "Japan Airlines", "X"]))
    result = forge.probe_solvability(draft_for(fixture_graph()), runs=3)
    assert result.match_count == 2
    assert result.solved


def test_probe_gateway_failure_counts_as_non_match(tmp_path):
    # only runs 1 and 2 scripted; run 3 hits the error default policy
    forge = forge_with(tmp_path, probe_rules(0, ["Japan Airlines", "Japan Airlines", None]))
    result = forge.probe_solvability(draft_for(fixture_graph()), runs=3)
    assert result.answers[2] == ""
    assert result.match_count == 2
    assert result.solved


def test_probe_requires_odd_runs_at_least_three(tmp_path):
    forge = forge_with(tmp_path, [])
    with pytest.raises(ValueError):
        forge.probe_solvability(draft_for(fixture_graph()), runs=4)
    with pytest.raises(ValueError):
        forge.probe_solvability(draft_for(fixture_graph()), runs=1)


# -- harden ------------------------------------------------------------------------------------


HARDENED_TEXT = "which oblique flag carrier painted a beloved idol on a jet serving a capital?"


def harden_rule(needle, question=HARDENED_TEXT):
    return (
        "chat",
        {"content_contains": ["TASK: harden", needle]},
        {"json": {"question": question}},
    )


def test_harden_removes_killer_pair_terms(tmp_path):
    text = "the answer flew a Boeing 777 to Japan in one clause"
    forge = forge_with(tmp_path, [harden_rule("Boeing 777")])
    draft = draft_for(fixture_graph(), text=text, status=STATUS_PROBED)
    out = forge.harden(draft, fixture_graph())
    assert "Boeing 777" not in out.text
    assert "Japan " not in out.text and not out.text.endswith("Japan")
    assert out.status == STATUS_HARDENED
    assert out.round == 1


def test_harden_failure_rolls_back_and_counts_attempts(tmp_path):
    # first attempt echoes a banned depth-1 title, second attempt is valid
    bad = "a question naming Tokyo is invalid"
    rules = [
        ("chat", {"content_contains": ["TASK: harden", "ATTEMPT: 1"]}, {"json": {"question": bad}}),
        ("chat", {"content_contains": ["TASK: harden", "ATTEMPT: 2"]}, {"json": {"question": HARDENED_TEXT}}),
    ]
    forge = forge_with(tmp_path, rules)
    draft = draft_for(fixture_graph(), status=STATUS_PROBED)
    round_before = draft.round
    out = forge.harden(draft, fixture_graph())
    attempts = [p for name, p in forge.sink_events if name == "harden_attempt"]
    assert [a["ok"] for a in attempts] == [False, True]
    assert attempts[0]["round"] == round_before  # round unchanged on rollback
    assert out.round == round_before + 1


def test_harden_exhausted_retries_raise(tmp_path):
    bad = "still naming Tokyo every time"
    rules = [("chat", {"content_contains": "TASK: harden"}, {"json": {"question": bad}})]
    forge = forge_with(tmp_path, rules, rewrite_retries=3)
    draft = draft_for(fixture_graph(), status=STATUS_PROBED)
    with pytest.raises(HardeningError):
        forge.harden(draft, fixture_graph())
    assert draft.round == 0


def test_harden_selects_all_deep_nodes_when_exactly_n_deep(tmp_path):
    forge = forge_with(tmp_path, [harden_rule("TASK: harden")])
    draft = draft_for(fixture_graph(), status=STATUS_PROBED)
    out = forge.harden(draft, fixture_graph())
    deep_ids = {c.node_id for c in out.clues if c.depth >= 2}
    assert deep_ids == {3, 4}  # both depth-2 nodes kept


def test_harden_never_changes_seed_answer(tmp_path):
    forge = forge_with(tmp_path, [harden_rule("TASK: harden")])
    draft = draft_for(fixture_graph(), status=STATUS_PROBED)
    assert forge.harden(draft, fixture_graph()).seed_answer == "Japan Airlines"


# -- refine_loop -----------------------------------------------------------------------------------


def test_refine_exits_at_first_unsolved_probe(tmp_path):
    forge = forge_with(tmp_path, probe_rules(0, ["X", "Y", "Z", "W", "V"]))
    draft = draft_for(fixture_graph())
    out = forge.refine_loop(draft, fixture_graph())
    assert out.round == 0
    assert out.status == STATUS_HARDENED


def test_refine_solved_twice_then_unsolved_exits_at_round_two(tmp_path):
    seed5 = ["Japan Airlines"] * 5
    miss5 = ["X"] * 5
    rules = (
        probe_rules(0, seed5)
        + probe_rules(1, seed5)
        + probe_rules(2, miss5)
        + [
            ("chat", {"content_contains": ["TASK: harden", "ATTEMPT: 1", COMPOSED[:25]]},
             {"json": {"question": HARDENED_TEXT}}),
            ("chat", {"content_contains": ["TASK: harden", "ATTEMPT: 1", "oblique flag carrier"]},
             {"json": {"question": HARDENED_TEXT + " (rev two)"}}),
        ]
    )
    forge = forge_with(tmp_path, rules)
    out = forge.refine_loop(draft_for(fixture_graph()), fixture_graph(), max_rounds=3)
    assert out.round == 2
    assert out.status == STATUS_HARDENED


def test_refine_round_cap_stops_at_max_rounds(tmp_path):
    seed5 = ["Japan Airlines"] * 5
    rules = (
        probe_rules(0, seed5)
        + probe_rules(1, seed5)
        + probe_rules(2, seed5)
        + [
            ("chat", {"content_contains": ["TASK: harden", COMPOSED[:25]]},
             {"json": {"question": HARDENED_TEXT}}),
            ("chat", {"content_contains": ["TASK: harden", "(rev two)"]},
             {"json": {"question": HARDENED_TEXT + " (rev three)"}}),
            ("chat", {"content_contains": ["TASK: harden", "oblique flag carrier"]},
             {"json": {"question": HARDENED_TEXT + " (rev two)"}}),
        ]
    )
    forge = forge_with(tmp_path, rules)
    out = forge.refine_loop(draft_for(fixture_graph()), fixture_graph(), max_rounds=3)
    assert out.round == 3
    assert out.status == STATUS_HARDENED


def test_refine_hardening_error_rejects(tmp_path):
    seed5 = ["Japan Airlines"] * 5
    bad = "every rewrite still says Tokyo"
    rules = probe_rules(0, seed5) + [
        ("chat", {"content_contains": "TASK: harden"}, {"json": {"question": bad}})
    ]
    forge = forge_with(tmp_path, rules)
    out = forge.refine_loop(draft_for(fixture_graph()), fixture_graph(), max_rounds=3)
    assert out.status == STATUS_REJECTED


def test_no_stage_leaks_seed_title_or_alias(tmp_path):
    rules = clue_rules() + [compose_rule()] + [
        ("chat", {"content_contains": "TASK: obfuscate"}, {"json": {"question": COMPOSED}}),
    ] + probe_rules(0, ["X", "Y", "Z", "W", "V"])
    forge = forge_with(tmp_path, rules)
    graph = fixture_graph()
    clues = forge.build_clues(graph)
    for clue in clues:
        assert "japan airlines" not in clue.oblique_text.casefold()
        assert "jal" not in clue.oblique_text.casefold().split()
    draft = forge.compose_question(clues, graph)
    assert "japan airlines" not in draft.text.casefold()
    draft = forge.obfuscate(draft)
    assert "japan airlines" not in draft.text.casefold()
    draft = forge.refine_loop(draft, graph)
    assert "japan airlines" not in draft.text.casefold()
