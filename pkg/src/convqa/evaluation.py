"""Reference-free metric harness, dataset statistics, question types and judge prompts."""

from __future__ import annotations

import json
import logging
import os
import re
import urllib.request
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Optional, Protocol, Sequence, Union

from . import plugins
from .dialog import ConvQADataset, Dialog, Role
from .rerank import LexicalOverlapScorer

log = logging.getLogger(__name__)

JUDGE_ENDPOINT_ENV = "CONVQA_JUDGE_ENDPOINT"


# -- statistics -----------------------------------------------------------------


@dataclass(frozen=True)
class DatasetStatistics:
    num_dialogs: int
    mean_turns: float
    turn_histogram: dict[int, int]

    @property
    def mean_turns_2dp(self) -> str:
        return f"{self.mean_turns:.2f}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "num_dialogs": self.num_dialogs,
            "mean_turns": round(self.mean_turns, 2),
            "turn_histogram": {str(k): v for k, v in sorted(self.turn_histogram.items())},
        }


def dataset_statistics(ds: Union[ConvQADataset, Sequence[Dialog]]) -> DatasetStatistics:
    dialogs = ds.dialogs if isinstance(ds, ConvQADataset) else tuple(ds)
    if not dialogs:
        raise ValueError("cannot compute statistics of an empty dataset")
    lengths = [len(d.utterances) for d in dialogs]
    return DatasetStatistics(
        num_dialogs=len(dialogs),
        mean_turns=sum(lengths) / len(lengths),
        turn_histogram=dict(sorted(Counter(lengths).items())),
    )


# -- metrics --------------------------------------------------------------------


class MetricPlugin(Protocol):
    name: str

    def evaluate(self, context: str, question: str, answer: str) -> float: ...


@dataclass(frozen=True)
class QuestionTurn:
    dialog_id: str
    turn_index: int
    context: str
    question: str
    answer: str


def grounding_text(d: Dialog) -> str:
    """The dialog's answer side joined back into passage text."""
    return " ".join(u.text for u in d.utterances if u.role is Role.AGENT)


def question_turns(d: Dialog) -> list[QuestionTurn]:
    context = grounding_text(d)
    utts = d.utterances
    return [
        QuestionTurn(d.id, i, context, utts[i].text, utts[i + 1].text)
        for i in range(len(utts) - 1)
        if utts[i].role is Role.USER and utts[i + 1].role is Role.AGENT
    ]


class LexicalOverlapMetric:
    name = "lexical-overlap"

    def __init__(self) -> None:
        self._scorer = LexicalOverlapScorer()

    def evaluate(self, context: str, question: str, answer: str) -> float:
        return self._scorer.score(context, question, answer)


class ConstantMetric:
    def __init__(self, value: float = 1.0, name: str = "constant"):
        self.value = float(value)
        self.name = name

    def evaluate(self, context: str, question: str, answer: str) -> float:
        return self.value


METRICS = {"lexical-overlap": LexicalOverlapMetric, "constant": ConstantMetric}


def get_metric(name: str, **kwargs: Any) -> MetricPlugin:
    return plugins.create(name, METRICS, "metric", **kwargs)


@dataclass
class EvaluationReport:
    means: dict[str, float] = field(default_factory=dict)
    per_dialog: dict[str, dict[str, float]] = field(default_factory=dict)
    turns: int = 0
    unavailable: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "means": self.means,
            "turns": self.turns,
            "unavailable": self.unavailable,
            "per_dialog": self.per_dialog,
        }


def evaluate_dataset(ds: ConvQADataset, metrics: Sequence[MetricPlugin]) -> EvaluationReport:
    """Mean of each metric over every question turn of the dataset.

    A metric that raises is reported as unavailable and the others still run.
    """
    turns = [qt for d in ds.dialogs for qt in question_turns(d)]
    if not turns:
        raise ValueError("dataset has no question turns to evaluate")
    report = EvaluationReport(turns=len(turns))
    for metric in metrics:
        try:
            values = [float(metric.evaluate(qt.context, qt.question, qt.answer)) for qt in turns]
        except Exception as exc:  # noqa: BLE001 - plug-in isolation
            log.warning("metric %s unavailable: %s", metric.name, exc)
            report.unavailable[metric.name] = str(exc)
            continue
        report.means[metric.name] = sum(values) / len(values)
        by_dialog: dict[str, list[float]] = {}
        for qt, v in zip(turns, values):
            by_dialog.setdefault(qt.dialog_id, []).append(v)
        report.per_dialog[metric.name] = {k: sum(v) / len(v) for k, v in by_dialog.items()}
    return report


# -- question types -------------------------------------------------------------

RAW_QUESTION_TYPES = (
    "verification", "disjunctive", "concept_completion", "example", "feature_specification",
    "quantification", "definition", "comparison", "interpretation", "causal_antecedent",
    "causal_consequence", "goal_orientation", "instrumental_procedural", "enablement",
    "expectation", "judgmental", "assertion", "request_directive",
)


@dataclass(frozen=True)
class QuestionTypeOntology:
    types: tuple[str, ...]
    merge_map: dict[str, str]

    def __post_init__(self) -> None:
        missing = [t for t in RAW_QUESTION_TYPES if t not in self.merge_map]
        if missing:
            raise ValueError(f"merge map does not cover raw types {missing}")
        stray = sorted(set(self.merge_map.values()) - set(self.types))
        if stray:
            raise ValueError(f"merge map targets unknown types {stray}")

    def merge(self, label: str) -> str:
        if label in self.types:
            return label
        try:
            return self.merge_map[label]
        except KeyError:
            raise ValueError(f"unknown question type {label!r}") from None

    @classmethod
    def load(cls, path: Union[str, Path, None] = None) -> "QuestionTypeOntology":
        if path is None:
            raw = resources.files("convqa").joinpath("data/question_types.json").read_text(encoding="utf-8")
        else:
            raw = Path(path).read_text(encoding="utf-8")
        data = json.loads(raw)
        return cls(types=tuple(data["types"]), merge_map=dict(data["merge_map"]))


class QuestionClassifier(Protocol):
    def classify(self, question: str) -> str: ...


_AUX = ("is", "are", "was", "were", "am", "do", "does", "did", "can", "could", "will", "would",
        "should", "has", "have", "had", "may", "might", "must", "shall", "isn't", "aren't",
        "wasn't", "weren't", "don't", "doesn't", "didn't", "can't", "couldn't", "won't", "wouldn't")
_WH = ("what", "who", "whom", "whose", "where", "when", "which")


def _has(q: str, *needles: str) -> bool:
    return any(n in q for n in needles)


class RuleQuestionClassifier:
    """Surface-pattern question typing (wh-words, auxiliaries, cue phrases).

    A lower-fidelity stand-in for a trained question-type classifier; rules
    are tried in a fixed order and the first match wins.
    """

    def classify(self, question: str) -> str:
        q = " ".join(question.lower().split())
        words = re.findall(r"[a-z']+", q)
        first = words[0] if words else ""
        if _has(q, "do you think", "in your opinion", "your opinion", "would you recommend",
                "do you like", "is it better", "should i "):
            return "judgmental"
        if _has(q, "difference between", "differ", "compare", "similar to", "similarit", " versus ", " vs "):
            return "comparison"
        if _has(q, "example", "for instance", "what are some", "what were some"):
            return "example"
        if q.startswith(("why not", "why didn't", "why wasn't", "why isn't", "why doesn't", "why don't")):
            return "expectation"
        if _has(q, "purpose", "what is the goal", "what was the goal", "what is the aim", "what was the aim"):
            return "goal_orientation"
        if first == "why" or _has(q, "what caused", "what causes", "what led to", "reason for"):
            return "causal_antecedent"
        if re.match(r"how (many|much|long|often|far|old|tall|big|large|high|frequently|soon|fast)\b", q) \
                or _has(q, "what percentage", "what proportion"):
            return "quantification"
        if _has(q, "what happens", "what happened", "what will happen", "effect of", "effects of",
                "the result", "impact of", "consequence", "outcome"):
            return "causal_consequence"
        if _has(q, "what kind", "what type", "what color", "what colour", "what shape", "look like",
                "characteristics", "what features", "properties"):
            return "feature_specification"
        if _has(q, "what allows", "what enables", "what makes it possible"):
            return "enablement"
        if first == "how" or _has(q, "what steps", "what is the process"):
            return "instrumental_procedural"
        if q.startswith(("tell me", "describe", "explain", "please", "give me", "list ")):
            return "request_directive"
        if first in _AUX:
            return "disjunctive" if " or " in q else "verification"
        if re.match(r"what (is|are|was|were) (an? |the )?[\w\-]+( [\w\-]+)?\?$", q) \
                or re.search(r"what does .+ mean\??$", q) or "meant by" in q:
            return "definition"
        if _has(q, "what can be inferred", "what does this imply", "what does that imply"):
            return "interpretation"
        if first in _WH:
            return "concept_completion"
        if not q.endswith("?"):
            return "assertion"
        return "concept_completion"


@dataclass(frozen=True)
class TypeDistribution:
    fractions: dict[str, float]
    counts: dict[str, int]
    total: int

    def to_dict(self) -> dict[str, Any]:
        return {"fractions": self.fractions, "counts": self.counts, "total": self.total}


def question_type_distribution(ds: Union[ConvQADataset, Iterable[str]],
                               classifier: Optional[QuestionClassifier],
                               ontology: Optional[QuestionTypeOntology] = None) -> TypeDistribution:
    if classifier is None:
        raise RuntimeError("no question-type classifier available; pass RuleQuestionClassifier() "
                           "for the rule-based fallback")
    ontology = ontology or QuestionTypeOntology.load()
    if isinstance(ds, ConvQADataset):
        questions = [u.text for d in ds.dialogs for u in d.utterances if u.role is Role.USER]
    else:
        questions = list(ds)
    if not questions:
        raise ValueError("no questions to classify")
    counts = Counter(ontology.merge(classifier.classify(q)) for q in questions)
    ordered = {t: counts[t] for t in ontology.types if counts[t]}
    total = len(questions)
    return TypeDistribution({t: c / total for t, c in ordered.items()}, ordered, total)


# -- LLM judge --------------------------------------------------------------------

JUDGE_TEMPLATE = """\
This is a task to evaluate the quality of a conversational question answering dataset. You \
will be given [context, two candidate questions, answer], and your task is to compare the \
quality of the candidate questions based on four criteria: contextual relevance, \
well-formedness, fluency, overall quality. For each criteria, answer which question is better.

1. Contextual Relevance: whether the question relevant to the answer/context
2. Well-formedness: whether the question is well-formed
3. Overall Quality: overall quality of the question

• Context: {context}
• Question A: {question_a}
• Question B: {question_b}
• Answer: {answer}

Choose the question which is more relevant to the given answer.
options: [Question A, Equal, Question B]
Choose the question which is more well-formed?
options: [Question A, Equal, Question B]
Choose the question which has better overall-quality.
options: [Question A, Equal, Question B]
"""


def build_judge_prompt(context: str, question_a: str, question_b: str, answer: str) -> str:
    for name, value in (("context", context), ("question_a", question_a),
                        ("question_b", question_b), ("answer", answer)):
        if not value or not value.strip():
            raise ValueError(f"{name} must be non-empty")
    return JUDGE_TEMPLATE.format(context=context, question_a=question_a, question_b=question_b, answer=answer)


def judge_prompts_for(ds_a: ConvQADataset, ds_b: ConvQADataset) -> list[tuple[str, str]]:
    """(name, prompt) for every question slot the two datasets share."""
    by_id = {d.id: d for d in ds_b.dialogs}
    out = []
    for da in ds_a.dialogs:
        db = by_id.get(da.id)
        if db is None:
            continue
        turns_b = {qt.turn_index: qt for qt in question_turns(db)}
        for qa in question_turns(da):
            qb = turns_b.get(qa.turn_index)
            if qb is None or qb.answer != qa.answer:
                continue
            out.append((f"{da.id}.{qa.turn_index}", build_judge_prompt(qa.context, qa.question, qb.question, qa.answer)))
    return out


class JudgeClient:
    """Minimal client for an LLM judge behind an HTTP endpoint.

    The endpoint comes from ``$CONVQA_JUDGE_ENDPOINT`` and must accept
    ``{"prompt": ...}`` and return ``{"text": ...}``.
    """

    def __init__(self, endpoint: Optional[str] = None, timeout: float = 60.0):
        self.endpoint = endpoint or os.environ.get(JUDGE_ENDPOINT_ENV)
        if not self.endpoint:
            raise RuntimeError(f"set ${JUDGE_ENDPOINT_ENV} to use the LLM judge")
        self.timeout = timeout

    def judge(self, prompt: str) -> str:
        req = urllib.request.Request(
            self.endpoint,
            data=json.dumps({"prompt": prompt}).encode("utf-8"),
            headers={"Content-Type": "application/json"},
        )
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            return json.loads(resp.read().decode("utf-8"))["text"]
