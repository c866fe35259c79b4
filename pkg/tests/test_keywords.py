import pytest
from hypothesis import given
from hypothesis import strategies as st

from convqa.keywords import FrequencyKeywordExtractor, format_keyword_prompt, get_extractor
from convqa.dialog import normalize_text


def test_extract_golden():
    assert FrequencyKeywordExtractor().extract("It will regenerate from seed only.", 2) == ["regenerate", "seed"]


def test_extract_stopwords_only():
    assert FrequencyKeywordExtractor().extract("the the of of", 3) == []


def test_extract_deterministic():
    ex = get_extractor("frequency")
    text = "Grevillea rudis is a shrub native to Western Australia."
    assert ex.extract(text, 3) == ex.extract(text, 3)


@given(st.text(min_size=1, max_size=60), st.integers(1, 5))
def test_extract_contract(text, k):
    out = FrequencyKeywordExtractor().extract(text, k)
    assert len(out) <= k
    assert all(kw and kw in normalize_text(text) for kw in out)


def test_format_keyword_prompt():
    assert format_keyword_prompt(["X"]) == "Keyword: X"
    assert format_keyword_prompt(["a", "b"]) == "Keyword: a, b"
    assert format_keyword_prompt([" x "]) == "Keyword: x"
    with pytest.raises(ValueError):
        format_keyword_prompt([])


class _Upper:
    def extract(self, text, max_keywords=3, context=None):
        return [w.upper() for w in text.split()[:max_keywords]]


def test_substitution_changes_content_not_syntax():
    text = "shrub height branchlets"
    a = format_keyword_prompt(FrequencyKeywordExtractor().extract(text, 2))
    b = format_keyword_prompt(_Upper().extract(text, 2))
    assert a != b
    for prompt in (a, b):
        assert prompt.startswith("Keyword: ") and prompt.count(", ") == 1
