"""Training examples for dialog reconstruction, QA matching and keyword-guided generation."""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from typing import Optional, Sequence

from .dialog import Dialog, Role, mask_utterance, qa_pairs
from .keywords import format_keyword_prompt
from .render import DEFAULT_SENTINEL, render_turns


class Task(str, enum.Enum):
    DR = "DR"
    QAM = "QAM"
    TDG = "TDG"


QAM_POSITIVE = "The answer matches the question"
QAM_NEGATIVE = "The answer does not match the question"


@dataclass(frozen=True)
class QAMTargets:
    positive: str = QAM_POSITIVE
    negative: str = QAM_NEGATIVE


@dataclass(frozen=True)
class TrainingExample:
    input_text: str
    target_text: str
    task: Task
    source_dialog_id: str


class NotEnoughPairs(ValueError):
    """The dialog cannot supply a same-dialog negative answer."""


def build_dr_example(d: Dialog, t: Optional[int] = None, rng_seed: int = 0,
                     sentinel: str = DEFAULT_SENTINEL) -> TrainingExample:
    if len(d.utterances) < 2:
        raise ValueError(f"dialog {d.id!r} has T={len(d.utterances)} < 2 utterances")
    if t is None:
        t = random.Random(rng_seed).randrange(len(d.utterances))
    masked = mask_utterance(d, t, sentinel)
    return TrainingExample(masked.render(), masked.target.text, Task.DR, d.id)


def build_qam_examples(d: Dialog, rng_seed: int = 0) -> tuple[TrainingExample, TrainingExample]:
    """One positive and one same-dialog negative QA pair.

    The question is drawn uniformly from the dialog's QA pairs and the
    negative answer uniformly from the other pairs' answers whose text
    differs from the positive answer.
    """
    pairs = qa_pairs(d)
    if len(pairs) < 2:
        raise NotEnoughPairs(f"dialog {d.id!r} has {len(pairs)} QA pair(s); need 2")
    rng = random.Random(rng_seed)
    i = rng.randrange(len(pairs))
    question, positive = pairs[i].question, pairs[i].answer
    negatives = [p.answer for j, p in enumerate(pairs) if j != i and p.answer.text != positive.text]
    if not negatives:
        raise NotEnoughPairs(f"dialog {d.id!r} has no answer distinct from {positive.text!r}")
    negative = negatives[rng.randrange(len(negatives))]

    def pair_input(answer_text: str) -> str:
        return render_turns([(Role.USER, question.text), (Role.AGENT, answer_text)])

    return (
        TrainingExample(pair_input(positive.text), QAM_POSITIVE, Task.QAM, d.id),
        TrainingExample(pair_input(negative.text), QAM_NEGATIVE, Task.QAM, d.id),
    )


def build_tdg_example(d: Dialog, t: int, keywords: Sequence[str],
                      sentinel: str = DEFAULT_SENTINEL) -> TrainingExample:
    masked = mask_utterance(d, t, sentinel)
    if masked.target.role is not Role.USER:
        raise ValueError(f"utterance {t} of dialog {d.id!r} is not a question (role {masked.target.role.value})")
    prompt = format_keyword_prompt(keywords)
    return TrainingExample(masked.render(keyword_prompt=prompt), masked.target.text, Task.TDG, d.id)


def answer_after(d: Dialog, t: int) -> Optional[str]:
    """Text of the AGENT utterance answering the question at ``t``, if any."""
    if t + 1 < len(d.utterances) and d.utterances[t + 1].role is Role.AGENT:
        return d.utterances[t + 1].text
    return None
