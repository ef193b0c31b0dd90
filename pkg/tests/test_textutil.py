from hypothesis import given
from hypothesis import strategies as st

from hopforge.textutil import (
    canonical_key,
    split_sentences,
    strip_markup,
    trigram_similarity,
    word_count,
    year_to_era,
)


def test_canonical_key_folds_case_and_whitespace():
    assert canonical_key("  japan   airlines ") == "japan airlines"
    assert canonical_key("Japan Airlines") == "japan airlines"
    assert canonical_key('"Tokyo!"') == "tokyo"


def test_canonical_key_unicode():
    assert canonical_key("Kōhaku Uta Gassen") == canonical_key("kōhaku  uta gassen")


def test_strip_markup_removes_citations():
    assert strip_markup("Founded in 1951.[1][citation needed]  More.") == "Founded in 1951. More."


def test_split_sentences():
    text = "First sentence. Second one! Third?"
    assert split_sentences(text) == ["First sentence.", "Second one!", "Third?"]


def test_trigram_similarity_bounds():
    assert trigram_similarity("Tokyo", "Tokyo") == 1.0
    assert trigram_similarity("Tokyo", "Osaka") < 0.5
    assert 0.0 <= trigram_similarity("Japan Airlines", "All Nippon Airways") <= 1.0


@given(st.text(min_size=0, max_size=40), st.text(min_size=0, max_size=40))
def test_trigram_similarity_symmetric_and_bounded(a, b):
    s = trigram_similarity(a, b)
    assert 0.0 <= s <= 1.0
    assert s == trigram_similarity(b, a)


def test_year_to_era_examples():
    assert year_to_era(2003) == "the early 21st century"
    assert year_to_era(1951) == "the mid 20th century"
    assert year_to_era(1888) == "the late 19th century"


def test_word_count():
    assert word_count("three little words") == 3
    assert word_count("") == 0
