"""Core dialog value types and the line-delimited dataset format.

A dataset file holds one JSON object per line. The first line is a header
record; each following line is one dialog::

    {"type": "header", "format": 1, "name": "...", "dialogs": 2, "candidates": null}
    {"id": "...", "title": "...", "source_passage_id": "...",
     "utterances": [{"role": "USER", "text": "...", "origin": "GENERATED"}, ...],
     "meta": {"title": "...", "prompt_text": "...", "keywords": [[...], ...]}}

Per-turn beam candidates live in a sidecar file next to the dataset
(``<dataset>.candidates.jsonl``), keyed by dialog id, and are only written
when at least one dialog carries them.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

_WS = re.compile(r"\s+")

FORMAT_VERSION = 1
SIDECAR_SUFFIX = ".candidates.jsonl"


def normalize_text(text: str) -> str:
    """Collapse whitespace runs to single spaces and strip both ends."""
    return _WS.sub(" ", text).strip()


class Role(str, enum.Enum):
    USER = "USER"
    AGENT = "AGENT"

    @property
    def other(self) -> "Role":
        return Role.AGENT if self is Role.USER else Role.USER


class Origin(str, enum.Enum):
    SOURCE_SENTENCE = "SOURCE_SENTENCE"
    GENERATED = "GENERATED"
    CORPUS = "CORPUS"


@dataclass(frozen=True)
class Utterance:
    text: str
    role: Role
    origin: Origin = Origin.CORPUS


@dataclass(frozen=True)
class Dialog:
    id: str
    utterances: tuple[Utterance, ...]
    title: Optional[str] = None
    source_passage_id: Optional[str] = None

    def __post_init__(self) -> None:
        if not isinstance(self.utterances, tuple):
            object.__setattr__(self, "utterances", tuple(self.utterances))

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def num_turns(self) -> int:
        return len(self.utterances)

    def with_utterance(self, index: int, utterance: Utterance) -> "Dialog":
        utts = list(self.utterances)
        utts[index] = utterance
        return replace(self, utterances=tuple(utts))


@dataclass(frozen=True)
class MaskedDialog:
    base: Dialog
    mask_index: int
    mask_sentinel: str

    def texts(self) -> list[str]:
        """Utterance texts with the masked slot replaced by the sentinel."""
        return [
            self.mask_sentinel if i == self.mask_index else u.text
            for i, u in enumerate(self.base.utterances)
        ]

    @property
    def target(self) -> Utterance:
        return self.base.utterances[self.mask_index]

    def render(self, keyword_prompt: Optional[str] = None) -> str:
        from .render import render_masked

        turns = [(u.role, u.text) for u in self.base.utterances]
        return render_masked(turns, self.mask_index, self.mask_sentinel, keyword_prompt)

    def fill(self, text: str) -> Dialog:
        """Put ``text`` into the masked slot, keeping the slot's role and origin."""
        return self.base.with_utterance(self.mask_index, replace(self.target, text=text))


@dataclass(frozen=True)
class QAPair:
    question: Utterance
    answer: Utterance
    turn_index: int


@dataclass(frozen=True)
class Passage:
    id: str
    title: str
    sentences: tuple[str, ...]
    raw_text: str

    def __post_init__(self) -> None:
        if not isinstance(self.sentences, tuple):
            object.__setattr__(self, "sentences", tuple(self.sentences))

    @property
    def text(self) -> str:
        return " ".join(self.sentences)

    def is_consistent(self) -> bool:
        return all(self.sentences) and self.text == normalize_text(self.raw_text)


@dataclass(frozen=True)
class Candidate:
    text: str
    model_score: float
    relevance_score: Optional[float] = None


@dataclass(frozen=True)
class CandidateSet:
    """Beam candidates for one masked slot, best model score first."""

    candidates: tuple[Candidate, ...]
    selected: Optional[int] = None

    def __post_init__(self) -> None:
        if not isinstance(self.candidates, tuple):
            object.__setattr__(self, "candidates", tuple(self.candidates))
        if not self.candidates:
            raise ValueError("a candidate set needs at least one candidate")
        scores = [c.model_score for c in self.candidates]
        if any(b > a for a, b in zip(scores, scores[1:])):
            raise ValueError(f"model scores must be non-increasing, got {scores}")
        if self.selected is not None and not 0 <= self.selected < len(self.candidates):
            raise ValueError(f"selected index {self.selected} out of range")

    def __len__(self) -> int:
        return len(self.candidates)

    def __getitem__(self, i: int) -> Candidate:
        return self.candidates[i]

    @property
    def texts(self) -> list[str]:
        return [c.text for c in self.candidates]


@dataclass(frozen=True)
class DialogMeta:
    title: Optional[str] = None
    prompt_text: Optional[str] = None
    keywords: tuple[tuple[str, ...], ...] = ()
    candidates: tuple[CandidateSet, ...] = ()


@dataclass(frozen=True)
class ConvQADataset:
    name: str
    dialogs: tuple[Dialog, ...]
    meta: dict[str, DialogMeta] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not isinstance(self.dialogs, tuple):
            object.__setattr__(self, "dialogs", tuple(self.dialogs))

    @classmethod
    def from_dialogs(
        cls,
        name: str,
        dialogs: Iterable[Dialog],
        meta: Optional[dict[str, DialogMeta]] = None,
    ) -> "ConvQADataset":
        dialogs = tuple(dialogs)
        meta = dict(meta or {})
        for d in dialogs:
            meta.setdefault(d.id, DialogMeta(title=d.title))
        return cls(name=name, dialogs=dialogs, meta=meta)

    def __len__(self) -> int:
        return len(self.dialogs)

    def violations(self) -> list[str]:
        problems = []
        seen: set[str] = set()
        for d in self.dialogs:
            if d.id in seen:
                problems.append(f"duplicate dialog id {d.id!r}")
            seen.add(d.id)
            problems.extend(f"dialog {d.id!r}: {v}" for v in validate_dialog(d))
            if d.id not in self.meta:
                problems.append(f"dialog {d.id!r}: missing metadata")
        for key in self.meta:
            if key not in seen:
                problems.append(f"metadata for unknown dialog id {key!r}")
        return problems


def validate_dialog(d: Any) -> list[str]:
    """Return human-readable invariant violations; an empty list means valid.

    Never raises: malformed input is reported, not thrown.
    """
    problems: list[str] = []
    try:
        utts = list(d.utterances)
    except Exception as exc:  # noqa: BLE001 - totality
        return [f"utterances: unreadable ({exc!r})"]
    if len(utts) < 2:
        problems.append(f"length: dialog needs at least 2 utterances, has {len(utts)}")
    prev_role = None
    for i, u in enumerate(utts):
        text = getattr(u, "text", None)
        role = getattr(u, "role", None)
        if not isinstance(text, str) or not text:
            problems.append(f"text: utterance {i} is empty")
        elif text != normalize_text(text):
            problems.append(f"text: utterance {i} is not whitespace-normalized")
        if not isinstance(role, Role):
            problems.append(f"role: utterance {i} has unknown role {role!r}")
        elif prev_role is not None and role == prev_role:
            problems.append(f"alternation: utterance {i} repeats role {role.value}")
        if getattr(u, "origin", None) is Origin.SOURCE_SENTENCE and role is not Role.AGENT:
            problems.append(f"origin: source sentence at utterance {i} must be spoken by AGENT")
        prev_role = role if isinstance(role, Role) else None
    return problems


def mask_utterance(d: Dialog, t: int, sentinel: str) -> MaskedDialog:
    if not 0 <= t < len(d.utterances):
        raise IndexError(f"mask index {t} out of range for dialog of length T={len(d.utterances)}")
    return MaskedDialog(base=d, mask_index=t, mask_sentinel=sentinel)


def qa_pairs(d: Dialog) -> list[QAPair]:
    """Adjacent (USER, AGENT) utterance pairs in dialog order."""
    out = []
    utts = d.utterances
    for i in range(len(utts) - 1):
        if utts[i].role is Role.USER and utts[i + 1].role is Role.AGENT:
            out.append(QAPair(question=utts[i], answer=utts[i + 1], turn_index=i))
    return out


# -- serialization ---------------------------------------------------------


class DatasetFormatError(ValueError):
    pass


def _dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), allow_nan=False)


def dialog_to_record(d: Dialog) -> dict[str, Any]:
    return {
        "id": d.id,
        "title": d.title,
        "source_passage_id": d.source_passage_id,
        "utterances": [
            {"role": u.role.value, "text": u.text, "origin": u.origin.value}
            for u in d.utterances
        ],
    }


def dialog_from_record(rec: dict[str, Any]) -> Dialog:
    return Dialog(
        id=str(rec["id"]),
        title=rec.get("title"),
        source_passage_id=rec.get("source_passage_id"),
        utterances=tuple(
            Utterance(text=u["text"], role=Role(u["role"]), origin=Origin(u.get("origin", "CORPUS")))
            for u in rec["utterances"]
        ),
    )


def _candidate_set_to_record(cs: CandidateSet) -> dict[str, Any]:
    return {
        "selected": cs.selected,
        "candidates": [
            {"text": c.text, "model_score": c.model_score, "relevance_score": c.relevance_score}
            for c in cs.candidates
        ],
    }


def _candidate_set_from_record(rec: dict[str, Any]) -> CandidateSet:
    return CandidateSet(
        candidates=tuple(
            Candidate(c["text"], float(c["model_score"]), c.get("relevance_score"))
            for c in rec["candidates"]
        ),
        selected=rec.get("selected"),
    )


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + SIDECAR_SUFFIX)


def write_dataset(ds: ConvQADataset, path: Union[str, Path]) -> Path:
    problems = ds.violations()
    if problems:
        raise DatasetFormatError(f"refusing to write invalid dataset {ds.name!r}: {problems[0]}")
    path = Path(path)
    side = sidecar_path(path)
    has_candidates = any(ds.meta[d.id].candidates for d in ds.dialogs)
    header = {
        "type": "header",
        "format": FORMAT_VERSION,
        "name": ds.name,
        "dialogs": len(ds.dialogs),
        "candidates": side.name if has_candidates else None,
    }
    lines = [_dumps(header)]
    side_lines = []
    for d in ds.dialogs:
        m = ds.meta[d.id]
        rec = dialog_to_record(d)
        rec["meta"] = {
            "title": m.title,
            "prompt_text": m.prompt_text,
            "keywords": [list(k) for k in m.keywords],
        }
        lines.append(_dumps(rec))
        if has_candidates:
            side_lines.append(_dumps({
                "id": d.id,
                "turns": [_candidate_set_to_record(cs) for cs in m.candidates],
            }))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if has_candidates:
        side.write_text("\n".join(side_lines) + "\n", encoding="utf-8")
    elif side.exists():
        side.unlink()
    return path


def _read_jsonl(path: Path) -> list[tuple[int, dict[str, Any]]]:
    rows = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DatasetFormatError(f"{path}: line {lineno}: expected an object")
            rows.append((lineno, obj))
    return rows


def read_dataset(path: Union[str, Path]) -> ConvQADataset:
    path = Path(path)
    rows = _read_jsonl(path)
    if not rows or rows[0][1].get("type") != "header":
        raise DatasetFormatError(f"{path}: line 1: missing header record")
    header = rows[0][1]
    dialogs: list[Dialog] = []
    meta: dict[str, DialogMeta] = {}
    for lineno, rec in rows[1:]:
        try:
            d = dialog_from_record(rec)
            m = rec.get("meta") or {}
            dm = DialogMeta(
                title=m.get("title"),
                prompt_text=m.get("prompt_text"),
                keywords=tuple(tuple(k) for k in m.get("keywords", [])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"{path}: line {lineno}: malformed dialog record ({exc!r})") from exc
        if d.id in meta:
            raise DatasetFormatError(f"{path}: line {lineno}: duplicate dialog id {d.id!r}")
        problems = validate_dialog(d)
        if problems:
            raise DatasetFormatError(f"{path}: dialog {d.id!r} is invalid: {problems[0]}")
        dialogs.append(d)
        meta[d.id] = dm
    if header.get("candidates"):
        side = path.with_name(header["candidates"])
        for lineno, rec in _read_jsonl(side):
            key = rec.get("id")
            if key not in meta:
                raise DatasetFormatError(f"{side}: line {lineno}: unknown dialog id {key!r}")
            meta[key] = replace(
                meta[key], candidates=tuple(_candidate_set_from_record(t) for t in rec["turns"])
            )
    return ConvQADataset(name=header.get("name", path.stem), dialogs=tuple(dialogs), meta=meta)


def dialog_fingerprint(dialogs: Sequence[Dialog]) -> str:
    import hashlib

    h = hashlib.sha256()
    for d in dialogs:
        h.update(_dumps(dialog_to_record(d)).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()
