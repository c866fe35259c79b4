"""Turn passages into ConvQA dialogs by filling question slots left to right."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .backend import GeneratorBackend
from .corpus import DEFAULT_PROMPT_TEMPLATE, build_title_prompt
from .dialog import (
    CandidateSet,
    ConvQADataset,
    Dialog,
    DialogMeta,
    Origin,
    Passage,
    Role,
    Utterance,
    normalize_text,
)
from .keywords import DEFAULT_MAX_KEYWORDS, KeywordExtractor, format_keyword_prompt
from .render import render_inference_context
from .rerank import RelevanceScorer, rerank

log = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.01


class InpaintError(RuntimeError):
    pass


@dataclass(frozen=True)
class GenerationConfig:
    beam_size: int = 5
    max_question_length: int = 64
    rerank: bool = True
    candidate_retention: bool = False
    max_keywords: int = DEFAULT_MAX_KEYWORDS
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_question_length < 1 or self.max_keywords < 1:
            raise ValueError("max_question_length and max_keywords must be >= 1")


@dataclass(frozen=True)
class InferenceContext:
    prompt_text: str
    completed: tuple[tuple[str, str], ...]
    next_answer: str
    keyword_prompt: str
    mask_sentinel: str

    def render(self) -> str:
        return render_inference_context(
            self.prompt_text, self.completed, self.next_answer, self.mask_sentinel, self.keyword_prompt or None
        )


def build_context(passage: Passage, t: int, history: Sequence[str], keywords: Sequence[str],
                  sentinel: str, prompt_text: Optional[str] = None) -> InferenceContext:
    """Context for generating question ``t``; ``history`` holds the questions chosen so far.

    Earlier keyword prompts are not carried forward: only the chosen
    questions and their answer sentences make up the history.
    """
    if not 0 <= t < len(passage.sentences):
        raise IndexError(f"step {t} out of range for passage with {len(passage.sentences)} sentences")
    if len(history) != t:
        raise ValueError(f"step {t} needs {t} earlier questions, got {len(history)}")
    return InferenceContext(
        prompt_text=prompt_text if prompt_text is not None else build_title_prompt(passage.title),
        completed=tuple(zip(history, passage.sentences[:t])),
        next_answer=passage.sentences[t],
        keyword_prompt=format_keyword_prompt(keywords) if keywords else "",
        mask_sentinel=sentinel,
    )


@dataclass(frozen=True)
class InpaintResult:
    dialog: Dialog
    candidates: tuple[CandidateSet, ...]
    keywords: tuple[tuple[str, ...], ...]
    prompt_text: str


def _limit_length(cs: CandidateSet, max_words: int) -> CandidateSet:
    kept = tuple(c for c in cs.candidates if len(c.text.split()) <= max_words)
    return CandidateSet(kept) if kept and len(kept) != len(cs) else cs


def inpaint_passage(passage: Passage, backend: GeneratorBackend, extractor: KeywordExtractor,
                    scorer: Optional[RelevanceScorer] = None,
                    cfg: GenerationConfig = GenerationConfig()) -> InpaintResult:
    if not passage.sentences:
        raise InpaintError(f"passage {passage.id!r} has no sentences")
    if cfg.rerank and scorer is None:
        raise ValueError("re-ranking is enabled but no relevance scorer was given")
    prompt_text = build_title_prompt(passage.title, cfg.prompt_template)
    context_text = passage.text
    questions: list[str] = []
    sets: list[CandidateSet] = []
    keyword_log: list[tuple[str, ...]] = []
    for t, answer in enumerate(passage.sentences):
        keywords = extractor.extract(answer, cfg.max_keywords, context=passage.sentences)
        ctx = build_context(passage, t, questions, keywords, backend.mask_sentinel, prompt_text)
        cs = backend.generate(ctx.render(), cfg.beam_size)
        if cs is None or len(cs) == 0:
            raise InpaintError(f"backend returned no candidates for passage {passage.id!r}, step {t}")
        if len(cs) > cfg.beam_size:
            raise InpaintError(
                f"backend returned {len(cs)} candidates for beam size {cfg.beam_size} "
                f"(passage {passage.id!r}, step {t})"
            )
        cs = _limit_length(cs, cfg.max_question_length)
        if cfg.rerank:
            chosen, cs = rerank(cs, scorer, context_text, answer)
        else:
            chosen, cs = 0, replace(cs, selected=0)
        question = normalize_text(cs[chosen].text)
        if not question:
            raise InpaintError(f"empty question selected for passage {passage.id!r}, step {t}")
        questions.append(question)
        sets.append(cs)
        keyword_log.append(tuple(keywords))

    utterances = []
    for q, a in zip(questions, passage.sentences):
        utterances.append(Utterance(q, Role.USER, Origin.GENERATED))
        utterances.append(Utterance(a, Role.AGENT, Origin.SOURCE_SENTENCE))
    dialog = Dialog(id=passage.id, utterances=tuple(utterances), title=passage.title,
                    source_passage_id=passage.id)
    return InpaintResult(dialog, tuple(sets), tuple(keyword_log), prompt_text)


def inpaint_corpus(passages: Sequence[Passage], backend: GeneratorBackend, extractor: KeywordExtractor,
                   scorer: Optional[RelevanceScorer] = None, cfg: GenerationConfig = GenerationConfig(),
                   name: str = "generated", workers: int = 1) -> ConvQADataset:
    """One dialog per passage, in passage order.

    A passage that fails is logged and left out; the run fails when more
    than 1% of passages fail. With ``workers > 1`` passages are processed
    concurrently (backend and scorer must tolerate that) and merged back in
    input order.
    """
    if not passages:
        raise ValueError("no passages to inpaint")
    ids = [p.id for p in passages]
    if len(set(ids)) != len(ids):
        raise ValueError("passage ids must be unique")

    def run(p: Passage):
        try:
            return inpaint_passage(p, backend, extractor, scorer, cfg)
        except Exception as exc:  # noqa: BLE001 - recorded per passage
            return exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, passages))
    else:
        outcomes = [run(p) for p in passages]

    dialogs, meta, failures = [], {}, []
    for p, out in zip(passages, outcomes):
        if isinstance(out, Exception):
            failures.append((p.id, out))
            log.warning("passage %s failed: %s", p.id, out)
            continue
        dialogs.append(out.dialog)
        meta[out.dialog.id] = DialogMeta(
            title=p.title,
            prompt_text=out.prompt_text,
            keywords=out.keywords,
            candidates=out.candidates if cfg.candidate_retention else (),
        )
        log.debug("inpainted %s (%d turns)", p.id, len(out.dialog))
    log.info("inpainted %d passages, %d failed", len(dialogs), len(failures))
    if len(failures) / len(passages) > MAX_FAILURE_FRACTION:
        first_id, first_exc = failures[0]
        raise InpaintError(
            f"{len(failures)} of {len(passages)} passages failed (first: {first_id!r}: {first_exc})"
        )
    return ConvQADataset(name=name, dialogs=tuple(dialogs), meta=meta)
