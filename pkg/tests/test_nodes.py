import json

import pytest

from hopforge.errors import CooccurrenceError, EmptyDocumentError, GatewayError
from hopforge.gateway import EndpointConfig, MockGateway, MockScript
from hopforge.nodes import NodeBuilder
from hopforge.store import CorpusStore

LEAD = (
    "Japan Airlines is the flag carrier of Japan. "
    "Albert Einstein once flew Japan Airlines across the Pacific Ocean during World War II."
)
HISTORY = "Japan Airlines studied Philosophy and Meditation according to legend."

NER_SPANS = [
    {"anchor": "Albert Einstein", "label": "person", "score": 0.97},
    {"anchor": "Pacific Ocean", "label": "location", "score": 0.91},
    {"anchor": "World War II", "label": "event_misc", "score": 0.88},
    {"anchor": "Japan Airlines", "label": "organization", "score": 0.99},
]


def build_store(tmp_path, sections, links, extra_pages=()):
    store = CorpusStore(tmp_path / "c.db")
    lines = [
        json.dumps(
            {
                "title": "Japan Airlines",
                "aliases": ["JAL"],
                "sections": sections,
                "links": links,
                "attributes": {"founding year": "1951", "alliance": "Oneworld"},
            }
        )
    ]
    for title in extra_pages:
        lines.append(
            json.dumps(
                {
                    "title": title,
                    "aliases": [],
                    "sections": [{"name": "Lead", "paragraphs": [f"{title} stub."]}],
                    "links": [],
                    "attributes": {},
                }
            )
        )
    result = store.ingest_corpus(lines)
    assert not result.errors
    return store


def builder_with(store, rules=None, **kwargs):
    script = MockScript(default_policy="error")
    script.add_rule("ner", {}, {"spans_for": NER_SPANS})
    for op, when, respond in rules or []:
        script.add_rule(op, when, respond)
    gateway = MockGateway(script, EndpointConfig(base_url="mock://", max_retries=0))
    return NodeBuilder(store, gateway, **kwargs)


STANDARD_SECTIONS = [
    {"name": "Lead", "paragraphs": [LEAD]},
    {"name": "History", "paragraphs": [HISTORY]},
    {"name": "See also", "paragraphs": ["Related: All Nippon Airways."]},
    {"name": "References", "paragraphs": ["[1] Some citation."]},
]
STANDARD_LINKS = [
    {"anchor": "Albert Einstein", "target": "Albert Einstein", "paragraph": 0},
    {"anchor": "Pacific Ocean", "target": "Pacific Ocean", "paragraph": 0},
    {"anchor": "World War II", "target": "World War II", "paragraph": 0},
    {"anchor": "Philosophy", "target": "Philosophy", "paragraph": 1},
    {"anchor": "Meditation", "target": "Meditation", "paragraph": 1},
    {"anchor": "All Nippon Airways", "target": "All Nippon Airways", "paragraph": 2},
]
STANDARD_PAGES = (
    "Albert Einstein",
    "Pacific Ocean",
    "World War II",
    "Philosophy",
    "Meditation",
    "All Nippon Airways",
)


# -- preprocess ----------------------------------------------------------


def test_preprocess_drops_boilerplate_sections(tmp_path):
    store = build_store(tmp_path, STANDARD_SECTIONS, STANDARD_LINKS, STANDARD_PAGES)
    builder = builder_with(store)
    doc = builder.preprocess(store.get_page("Japan Airlines"))
    assert [p.section for p in doc.paragraphs] == ["Lead", "History"]
    # links out of dropped sections are gone
    assert all(o.paragraph_index in {0, 1} for o in doc.outlinks)
    assert {o.target_title for o in doc.outlinks} == {
        "Albert Einstein", "Pacific Ocean", "World War II", "Philosophy", "Meditation",
    }


def test_preprocess_only_references_is_empty_document(tmp_path):
    store = build_store(
        tmp_path, [{"name": "References", "paragraphs": ["[1] Citation."]}], []
    )
    builder = builder_with(store)
    with pytest.raises(EmptyDocumentError):
        builder.preprocess(store.get_page("Japan Airlines"))


def test_preprocess_identity_without_droppable_sections(tmp_path):
    sections = [{"name": "Lead", "paragraphs": [LEAD]}]
    store = build_store(tmp_path, sections, [])
    builder = builder_with(store)
    doc = builder.preprocess(store.get_page("Japan Airlines"))
    assert [p.text for p in doc.paragraphs] == [LEAD]


def test_preprocess_preserves_original_indices(tmp_path):
    sections = [
        {"name": "See also", "paragraphs": ["Dropped."]},
        {"name": "Lead", "paragraphs": [LEAD]},
    ]
    store = build_store(tmp_path, sections, [])
    builder = builder_with(store)
    doc = builder.preprocess(store.get_page("Japan Airlines"))
    assert [p.index for p in doc.paragraphs] == [1]


# -- extract_and_filter_candidates -------------------------------------------


def test_accepted_labels_pass_filter(tmp_path):
    store = build_store(tmp_path, STANDARD_SECTIONS, STANDARD_LINKS, STANDARD_PAGES)
    builder = builder_with(store)
    page = store.get_page("Japan Airlines")
    candidates = builder.extract_and_filter_candidates(builder.preprocess(page), page)
    by_title = {c.title: c.entity_label for c in candidates}
    assert by_title == {
        "Albert Einstein": "person",
        "Pacific Ocean": "location",
        "World War II": "event_misc",
    }


def test_abstract_concepts_rejected(tmp_path):
    store = build_store(tmp_path, STANDARD_SECTIONS, STANDARD_LINKS, STANDARD_PAGES)
    builder = builder_with(store)
    page = store.get_page("Japan Airlines")
    titles = {c.title for c in builder.extract_and_filter_candidates(builder.preprocess(page), page)}
    assert "Philosophy" not in titles
    assert "Meditation" not in titles


def test_dangling_links_rejected(tmp_path):
    links = STANDARD_LINKS + [{"anchor": "Ghost", "target": "Ghost Page", "paragraph": 0}]
    store = build_store(tmp_path, STANDARD_SECTIONS, links, STANDARD_PAGES)
    builder = builder_with(store)
    page = store.get_page("Japan Airlines")
    titles = {c.title for c in builder.extract_and_filter_candidates(builder.preprocess(page), page)}
    assert "Ghost Page" not in titles


def test_duplicate_links_merge_with_summed_frequency(tmp_path):
    text = "Albert Einstein flew Japan Airlines. Japan Airlines thanked Albert Einstein."
    sections = [
        {"name": "Lead", "paragraphs": [text]},
        {"name": "Body", "paragraphs": [LEAD, "Albert Einstein returned on Japan Airlines."]},
    ]
    links = [
        {"anchor": "Albert Einstein", "target": "Albert Einstein", "paragraph": 0},
        {"anchor": "Albert Einstein", "target": "Albert Einstein", "paragraph": 1},
        {"anchor": "Albert Einstein", "target": "Albert Einstein", "paragraph": 2},
    ]
    store = build_store(tmp_path, sections, links, ("Albert Einstein",))
    builder = builder_with(store)
    page = store.get_page("Japan Airlines")
    candidates = builder.extract_and_filter_candidates(builder.preprocess(page), page)
    assert len(candidates) == 1
    assert candidates[0].mention_frequency == 3
    # evidence comes from the first occurrence
    assert candidates[0].evidence.paragraph_index == 0


def test_ner_threshold_rejects_low_scores(tmp_path):
    store = build_store(tmp_path, STANDARD_SECTIONS, STANDARD_LINKS, STANDARD_PAGES)
    builder = builder_with(store, ner_threshold=0.95)
    page = store.get_page("Japan Airlines")
    titles = {c.title for c in builder.extract_and_filter_candidates(builder.preprocess(page), page)}
    assert titles == {"Albert Einstein"}  # only the 0.97 span survives


def test_threshold_monotonicity(tmp_path):
    store = build_store(tmp_path, STANDARD_SECTIONS, STANDARD_LINKS, STANDARD_PAGES)
    page = store.get_page("Japan Airlines")
    previous = None
    for threshold in (0.1, 0.5, 0.9, 0.95, 0.99):
        builder = builder_with(store, ner_threshold=threshold)
        titles = {
            c.title for c in builder.extract_and_filter_candidates(builder.preprocess(page), page)
        }
        if previous is not None:
            assert titles <= previous
        previous = titles


def test_all_survivors_meet_threshold_and_labels(tmp_path):
    store = build_store(tmp_path, STANDARD_SECTIONS, STANDARD_LINKS, STANDARD_PAGES)
    builder = builder_with(store, ner_threshold=0.5)
    page = store.get_page("Japan Airlines")
    for candidate in builder.extract_and_filter_candidates(builder.preprocess(page), page):
        assert candidate.ner_score >= 0.5
        assert candidate.entity_label in {"person", "location", "organization", "event_misc"}


def test_ner_failure_propagates_without_partial_result(tmp_path):
    store = build_store(tmp_path, STANDARD_SECTIONS, STANDARD_LINKS, STANDARD_PAGES)
    script = MockScript(default_policy="error")
    gateway = MockGateway(script, EndpointConfig(base_url="mock://", max_retries=0))
    builder = NodeBuilder(store, gateway)
    page = store.get_page("Japan Airlines")
    with pytest.raises(GatewayError):
        builder.extract_and_filter_candidates(builder.preprocess(page), page)


# -- associate_evidence ---------------------------------------------------------


def test_evidence_with_explicit_cooccurrence_is_unchanged(tmp_path):
    store = build_store(tmp_path, STANDARD_SECTIONS, STANDARD_LINKS, STANDARD_PAGES)
    builder = builder_with(store)
    page = store.get_page("Japan Airlines")
    candidate = builder.extract_and_filter_candidates(builder.preprocess(page), page)[0]
    evidence = builder.associate_evidence(candidate, page)
    assert evidence.text == candidate.evidence.text


def test_coref_replaces_ambiguous_mention(tmp_path):
    text = "The airline painted Albert Einstein on a jet."
    sections = [{"name": "Lead", "paragraphs": [text]}]
    links = [{"anchor": "Albert Einstein", "target": "Albert Einstein", "paragraph": 0}]
    store = build_store(tmp_path, sections, links, ("Albert Einstein",))
    resolved = "Japan Airlines painted Albert Einstein on a jet."
    builder = builder_with(
        store,
        rules=[("chat", {"content_contains": "TASK: coref"}, {"json": {"text": resolved}})],
        coref_enabled=True,
    )
    page = store.get_page("Japan Airlines")
    candidate = builder.extract_and_filter_candidates(builder.preprocess(page), page)[0]
    evidence = builder.associate_evidence(candidate, page)
    assert evidence.text == resolved


def test_no_cooccurrence_rejected(tmp_path):
    text = "A famous physicist, Albert Einstein, lived in Princeton."
    sections = [{"name": "Lead", "paragraphs": [text]}]
    links = [{"anchor": "Albert Einstein", "target": "Albert Einstein", "paragraph": 0}]
    store = build_store(tmp_path, sections, links, ("Albert Einstein",))
    builder = builder_with(store)
    page = store.get_page("Japan Airlines")
    candidate = builder.extract_and_filter_candidates(builder.preprocess(page), page)[0]
    with pytest.raises(CooccurrenceError):
        builder.associate_evidence(candidate, page)


def test_coref_failure_falls_back_to_raw_paragraph(tmp_path):
    store = build_store(tmp_path, STANDARD_SECTIONS, STANDARD_LINKS, STANDARD_PAGES)
    builder = builder_with(store, coref_enabled=True)  # no coref rule: scripted failure
    page = store.get_page("Japan Airlines")
    candidate = builder.extract_and_filter_candidates(builder.preprocess(page), page)[0]
    evidence = builder.associate_evidence(candidate, page)
    assert evidence.text == candidate.evidence.text


# -- enrich_entity ------------------------------------------------------------------


def test_enrich_returns_stored_attributes(tmp_path):
    store = build_store(tmp_path, STANDARD_SECTIONS, STANDARD_LINKS, STANDARD_PAGES)
    builder = builder_with(store)
    assert builder.enrich_entity("Japan Airlines") == {
        "founding year": "1951",
        "alliance": "Oneworld",
    }


def test_enrich_empty_attributes(tmp_path):
    store = build_store(tmp_path, STANDARD_SECTIONS, STANDARD_LINKS, STANDARD_PAGES)
    builder = builder_with(store)
    assert builder.enrich_entity("Philosophy") == {}


def test_enrich_unknown_entity_not_found(tmp_path):
    from hopforge.errors import PageNotFoundError

    store = build_store(tmp_path, STANDARD_SECTIONS, STANDARD_LINKS, STANDARD_PAGES)
    builder = builder_with(store)
    with pytest.raises(PageNotFoundError):
        builder.enrich_entity("Unknown Entity")
