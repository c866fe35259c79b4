"""The one text renderer shared by training-example builders and inference.

Keeping a single renderer means the model sees the same layout when it is
trained on masked dialogs and when it fills question slots in a passage.
"""

from __future__ import annotations

from typing import Optional, Sequence

from .dialog import Role

ROLE_PREFIX = {Role.USER: "User: ", Role.AGENT: "Agent: "}
TURN_SEPARATOR = " "
DEFAULT_SENTINEL = "<mask>"


def render_turn(role: Role, text: str) -> str:
    return ROLE_PREFIX[role] + text


def render_turns(turns: Sequence[tuple[Role, str]], prompt_text: Optional[str] = None) -> str:
    parts = [render_turn(role, text) for role, text in turns]
    if prompt_text:
        parts.insert(0, prompt_text)
    return TURN_SEPARATOR.join(parts)


def masked_slot(sentinel: str, keyword_prompt: Optional[str] = None) -> str:
    """Text placed in a masked slot; the keyword prompt sits right before the sentinel."""
    if keyword_prompt:
        return f"{keyword_prompt} {sentinel}"
    return sentinel


def render_masked(
    turns: Sequence[tuple[Role, str]],
    mask_index: int,
    sentinel: str,
    keyword_prompt: Optional[str] = None,
    prompt_text: Optional[str] = None,
) -> str:
    slot = masked_slot(sentinel, keyword_prompt)
    shown = [(role, slot if i == mask_index else text) for i, (role, text) in enumerate(turns)]
    return render_turns(shown, prompt_text=prompt_text)


def render_inference_context(
    prompt_text: str,
    completed: Sequence[tuple[str, str]],
    next_answer: str,
    sentinel: str,
    keyword_prompt: Optional[str] = None,
) -> str:
    """Render ``(prompt, q1, a1, ..., keyword prompt, sentinel, next_answer)``."""
    turns: list[tuple[Role, str]] = []
    for question, answer in completed:
        turns.append((Role.USER, question))
        turns.append((Role.AGENT, answer))
    mask_index = len(turns)
    turns.append((Role.USER, ""))
    turns.append((Role.AGENT, next_answer))
    return render_masked(turns, mask_index, sentinel, keyword_prompt, prompt_text=prompt_text)


def split_at_sentinel(rendered: str, sentinel: str) -> tuple[str, str]:
    """Split a rendered input around its single sentinel occurrence."""
    if rendered.count(sentinel) != 1:
        raise ValueError(f"expected exactly one {sentinel!r} in rendered input")
    before, after = rendered.split(sentinel)
    return before, after
