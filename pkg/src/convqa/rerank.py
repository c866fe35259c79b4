"""Pick the beam candidate most relevant to the passage and the answer."""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Any, Protocol

from . import plugins
from .dialog import CandidateSet
from .keywords import content_words


class ScorerError(RuntimeError):
    pass


class RelevanceScorer(Protocol):
    def score(self, context: str, question: str, answer: str) -> float: ...


class LexicalOverlapScorer:
    """Content-word overlap of the question with the answer and the passage.

    The score averages two fractions of the question's distinct content
    words: those found in the answer, and those found in the answer or the
    context. It lies in [0, 1]; a question that copies its answer scores 1.
    A question with no content words scores 0.
    """

    name = "lexical-overlap"

    def score(self, context: str, question: str, answer: str) -> float:
        q = set(content_words(question))
        if not q:
            return 0.0
        a = set(content_words(answer))
        c = set(content_words(context))
        return 0.5 * (len(q & a) / len(q) + len(q & (a | c)) / len(q))


class FunctionScorer:
    """Adapt any ``f(context, question, answer) -> float`` into a scorer."""

    def __init__(self, fn, name: str = "function"):
        self.fn = fn
        self.name = name

    def score(self, context: str, question: str, answer: str) -> float:
        return float(self.fn(context, question, answer))


SCORERS = {"lexical-overlap": LexicalOverlapScorer}


def get_scorer(name: str = "lexical-overlap", **kwargs: Any) -> RelevanceScorer:
    return plugins.create(name, SCORERS, "scorer", **kwargs)


def rerank(cs: CandidateSet, scorer: RelevanceScorer, context: str, answer: str) -> tuple[int, CandidateSet]:
    """Score every candidate and select the argmax; ties go to the lowest index.

    The scorer is called once per candidate. Any failure or non-finite score
    aborts the whole selection.
    """
    scored = []
    for i, cand in enumerate(cs.candidates):
        if not cand.text.strip():
            raise ScorerError(f"candidate {i} is empty")
        try:
            value = float(scorer.score(context, cand.text, answer))
        except Exception as exc:
            raise ScorerError(f"scorer failed on candidate {i} ({cand.text!r}): {exc}") from exc
        if not math.isfinite(value):
            raise ScorerError(f"scorer returned non-finite {value!r} for candidate {i}")
        scored.append(replace(cand, relevance_score=value))
    best = 0
    for i, cand in enumerate(scored):
        if cand.relevance_score > scored[best].relevance_score:
            best = i
    return best, CandidateSet(tuple(scored), selected=best)
