"""Answer keyword extraction and the ``Keyword: ...`` prompt."""

from __future__ import annotations

import math
import re
from collections import Counter
from functools import lru_cache
from importlib import resources
from typing import Optional, Protocol, Sequence

from . import plugins
from .dialog import normalize_text

KEYWORD_PREFIX = "Keyword: "
KEYWORD_JOINER = ", "
DEFAULT_MAX_KEYWORDS = 3

_TOKEN = re.compile(r"[^\W_](?:[\w'\-]*[^\W_])?")


class KeywordExtractor(Protocol):
    def extract(self, text: str, max_keywords: int = DEFAULT_MAX_KEYWORDS,
                context: Optional[Sequence[str]] = None) -> list[str]: ...


@lru_cache(maxsize=None)
def default_stopwords() -> frozenset[str]:
    raw = resources.files("convqa").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(w.strip().lower() for w in raw.splitlines() if w.strip())


def content_words(text: str, stopwords: Optional[frozenset[str]] = None) -> list[str]:
    """Lower-cased non-stopword tokens of ``text`` in reading order."""
    stop = default_stopwords() if stopwords is None else stopwords
    return [t for t in (m.group(0).lower() for m in _TOKEN.finditer(text)) if t not in stop and len(t) > 1]


class FrequencyKeywordExtractor:
    """Stopword filter plus tf-idf style scoring against the surrounding passage.

    Terms are scored by their count in ``text``; when ``context`` sentences are
    given, each count is weighted by a smoothed inverse sentence frequency so
    that words specific to this answer outrank words repeated across the
    passage. Ties keep first-occurrence order, so output is deterministic.
    """

    def __init__(self, stopwords: Optional[Sequence[str]] = None, min_length: int = 2):
        self.stopwords = default_stopwords() if stopwords is None else frozenset(w.lower() for w in stopwords)
        self.min_length = min_length

    def extract(self, text: str, max_keywords: int = DEFAULT_MAX_KEYWORDS,
                context: Optional[Sequence[str]] = None) -> list[str]:
        if max_keywords < 1:
            raise ValueError("max_keywords must be >= 1")
        text = normalize_text(text)
        surface: dict[str, str] = {}
        order: dict[str, int] = {}
        counts: Counter[str] = Counter()
        for m in _TOKEN.finditer(text):
            word = m.group(0)
            key = word.lower()
            if key in self.stopwords or len(key) < self.min_length:
                continue
            counts[key] += 1
            if key not in surface:
                surface[key] = word
                order[key] = len(order)

        idf = {key: 1.0 for key in counts}
        if context:
            docs = [set(t.lower() for t in _TOKEN.findall(s)) for s in context]
            n = len(docs)
            for key in counts:
                df = sum(key in d for d in docs)
                idf[key] = math.log((1 + n) / (1 + df)) + 1.0

        ranked = sorted(counts, key=lambda k: (-counts[k] * idf[k], order[k]))
        return [surface[k] for k in ranked[:max_keywords]]


def format_keyword_prompt(keywords: Sequence[str]) -> str:
    cleaned = [normalize_text(k) for k in keywords]
    if not cleaned:
        raise ValueError("keyword prompt needs at least one keyword")
    if not all(cleaned):
        raise ValueError(f"blank keyword in {list(keywords)!r}")
    return KEYWORD_PREFIX + KEYWORD_JOINER.join(cleaned)


EXTRACTORS = {"frequency": FrequencyKeywordExtractor}


def get_extractor(name: str = "frequency", **kwargs) -> KeywordExtractor:
    return plugins.create(name, EXTRACTORS, "keyword extractor", **kwargs)
