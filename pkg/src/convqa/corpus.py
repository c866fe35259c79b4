"""Corpus loading, sentence segmentation and the title prompt.

Dialog corpora come in their native release formats and are mapped to
:class:`~convqa.dialog.Dialog` by one adapter per corpus. Text corpora are
mapped to :class:`~convqa.dialog.Passage` after sentence segmentation.
Nothing here downloads data.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Optional, Protocol, Sequence, Union

from .dialog import Dialog, Origin, Passage, Role, Utterance, normalize_text, validate_dialog

log = logging.getLogger(__name__)

DEFAULT_PROMPT_TEMPLATE = "Hello, I want to learn about {title}."
MAX_SKIP_FRACTION = 0.01


class CorpusError(RuntimeError):
    pass


class CorpusKind(str, enum.Enum):
    OPEN_DOMAIN_DIALOG = "OPEN_DOMAIN_DIALOG"
    CONVQA_DIALOG = "CONVQA_DIALOG"
    TEXT_PASSAGES = "TEXT_PASSAGES"


@dataclass(frozen=True)
class CorpusDescriptor:
    name: str
    kind: CorpusKind
    path: str
    adapter: Optional[str] = None

    @property
    def adapter_id(self) -> str:
        if self.adapter:
            return self.adapter
        key = re.sub(r"[^a-z0-9]", "", self.name.lower())
        if key in DEFAULT_ADAPTERS:
            return DEFAULT_ADAPTERS[key]
        return "passages-jsonl" if self.kind is CorpusKind.TEXT_PASSAGES else "dialog-jsonl"

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "kind": self.kind.value, "path": self.path, "adapter": self.adapter_id}


@dataclass(frozen=True)
class DialogCorpus:
    """A loaded dialog corpus together with what it was loaded from."""

    descriptor: CorpusDescriptor
    dialogs: tuple[Dialog, ...]

    @property
    def is_convqa(self) -> bool:
        return self.descriptor.kind is CorpusKind.CONVQA_DIALOG


# -- segmentation ------------------------------------------------------------

ABBREVIATIONS = frozenset("""
mr mrs ms dr prof st jr sr vs inc ltd co corp no nos fig figs al approx dept est gen gov
jan feb mar apr jun jul aug sep sept oct nov dec mt ft col lt sgt capt rev hon pp vol eq
""".split())

_OPENERS = "\"'([“‘"
_CLOSERS = "\"')]”’"


class Segmenter(Protocol):
    def split(self, text: str) -> list[str]: ...


class RuleSegmenter:
    """Split at terminal punctuation followed by a capitalised word.

    Known abbreviations (``Dr.``, ``Fig.``, ...) and dotted initialisms
    (``U.S.``, ``e.g.``) never end a sentence. Input is whitespace-normalized
    first and splits happen only at spaces, so joining the pieces with single
    spaces gives back the normalized text.
    """

    def __init__(self, abbreviations: Iterable[str] = ABBREVIATIONS):
        self.abbreviations = frozenset(a.lower().rstrip(".") for a in abbreviations)

    def _ends_sentence(self, token: str) -> bool:
        core = token.rstrip(_CLOSERS)
        if not core or core[-1] not in ".!?":
            return False
        if core[-1] != ".":
            return True
        word = core.lstrip(_OPENERS)[:-1].lower()
        if word in self.abbreviations:
            return False
        if re.fullmatch(r"(?:[a-z]\.)+[a-z]", word):
            return False
        return True

    @staticmethod
    def _starts_sentence(token: str) -> bool:
        head = token.lstrip(_OPENERS)
        return bool(head) and (head[0].isupper() or head[0].isdigit())

    def split(self, text: str) -> list[str]:
        tokens = normalize_text(text).split(" ")
        if tokens == [""]:
            return []
        sentences, current = [], [tokens[0]]
        for prev, tok in zip(tokens, tokens[1:]):
            if self._ends_sentence(prev) and self._starts_sentence(tok):
                sentences.append(" ".join(current))
                current = []
            current.append(tok)
        sentences.append(" ".join(current))
        return sentences


def passage_id_for(title: str, raw: str) -> str:
    digest = hashlib.sha1(f"{normalize_text(title)}\n{normalize_text(raw)}".encode("utf-8")).hexdigest()
    return f"p-{digest[:16]}"


def segment_passage(raw: str, title: str, segmenter: Optional[Segmenter] = None,
                    passage_id: Optional[str] = None) -> Passage:
    normalized = normalize_text(raw)
    if not normalized:
        raise ValueError("passage text is empty after normalization")
    sentences = [normalize_text(s) for s in (segmenter or RuleSegmenter()).split(normalized)]
    sentences = [s for s in sentences if s]
    if not sentences:
        raise ValueError("segmentation produced no sentences")
    passage = Passage(
        id=passage_id or passage_id_for(title, normalized),
        title=normalize_text(title),
        sentences=tuple(sentences),
        raw_text=raw,
    )
    if not passage.is_consistent():
        raise ValueError("segmenter output does not rejoin to the normalized passage text")
    return passage


def build_title_prompt(title: str, template: str = DEFAULT_PROMPT_TEMPLATE) -> str:
    title = normalize_text(title)
    if not title:
        raise ValueError("title prompt needs a non-empty title")
    return template.format(title=title)


# -- dialog adapters -----------------------------------------------------------
#
# An adapter turns one file into (record id, turns) items, where turns is a
# list of (role or None, text). ``None`` roles mean "alternate, first speaker
# is USER". A record that cannot be parsed is yielded as (record id, exception).

RawTurns = list[tuple[Optional[Role], str]]
AdapterItem = tuple[str, Union[RawTurns, Exception]]


def _iter_json_lines(path: Path) -> Iterator[tuple[int, Any]]:
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    yield lineno, json.loads(line)
                except json.JSONDecodeError as exc:
                    yield lineno, exc


def _dialog_jsonl(path: Path) -> Iterator[AdapterItem]:
    for lineno, rec in _iter_json_lines(path):
        key = f"{path.name}:{lineno}"
        if isinstance(rec, Exception):
            yield key, rec
            continue
        if rec.get("type") == "header":
            continue
        try:
            turns = [(Role(u["role"]) if u.get("role") else None, u["text"]) for u in rec["utterances"]]
            yield str(rec.get("id", key)), turns
        except (KeyError, TypeError, ValueError) as exc:
            yield key, exc


def _dailydialog(path: Path) -> Iterator[AdapterItem]:
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = [p for p in line.split("__eou__")]
            turns: RawTurns = [(None, p) for p in parts if p.strip()]
            yield f"dailydialog-{lineno}", turns


def _taskmaster(path: Path) -> Iterator[AdapterItem]:
    try:
        records = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        yield path.name, exc
        return
    speakers = {"USER": Role.USER, "ASSISTANT": Role.AGENT}
    for i, rec in enumerate(records):
        key = str(rec.get("conversation_id", f"{path.name}:{i}")) if isinstance(rec, dict) else f"{path.name}:{i}"
        try:
            yield key, [(speakers[u["speaker"].upper()], u["text"]) for u in rec["utterances"]]
        except (KeyError, TypeError, AttributeError) as exc:
            yield key, exc


def _qrecc(path: Path) -> Iterator[AdapterItem]:
    try:
        records = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        yield path.name, exc
        return
    convs: dict[str, list[tuple[int, str, str]]] = {}
    for rec in records:
        try:
            convs.setdefault(str(rec["Conversation_no"]), []).append(
                (int(rec["Turn_no"]), rec["Question"], rec["Truth_answer"])
            )
        except (KeyError, TypeError, ValueError) as exc:
            yield f"{path.name}:record", exc
    for conv_id, rows in convs.items():
        turns: RawTurns = []
        for _, q, a in sorted(rows):
            turns += [(Role.USER, q), (Role.AGENT, a)]
        yield f"qrecc-{conv_id}", turns


def _orquac(path: Path) -> Iterator[AdapterItem]:
    convs: dict[str, list[tuple[int, str, str]]] = {}
    for lineno, rec in _iter_json_lines(path):
        if isinstance(rec, Exception):
            yield f"{path.name}:{lineno}", rec
            continue
        try:
            conv_id, _, turn = rec["qid"].rpartition("_q#")
            answer = rec["answer"]["text"]
            convs.setdefault(conv_id, []).append((int(turn), rec["question"], answer))
        except (KeyError, TypeError, ValueError) as exc:
            yield f"{path.name}:{lineno}", exc
    for conv_id, rows in convs.items():
        turns: RawTurns = []
        for _, q, a in sorted(rows):
            turns += [(Role.USER, q), (Role.AGENT, a)]
        yield conv_id, turns


DIALOG_ADAPTERS: dict[str, Callable[[Path], Iterator[AdapterItem]]] = {
    "dialog-jsonl": _dialog_jsonl,
    "dailydialog": _dailydialog,
    "taskmaster": _taskmaster,
    "qrecc": _qrecc,
    "orquac": _orquac,
}

# field names (id, title, text) per passage corpus; dotted names reach into objects
PASSAGE_FIELDS: dict[str, tuple[str, str, str]] = {
    "passages-jsonl": ("id", "title", "text"),
    "wikipedia": ("id", "title", "text"),
    "pubmed": ("pmid", "title", "abstract"),
    "ccnews": ("url", "title", "maintext"),
    "elsevier": ("docId", "metadata.title", "abstract"),
}

DEFAULT_ADAPTERS = {
    "dailydialog": "dailydialog",
    "taskmaster": "taskmaster",
    "orquac": "orquac",
    "qrecc": "qrecc",
    "wikipedia": "wikipedia",
    "pubmed": "pubmed",
    "ccnews": "ccnews",
    "elsevier": "elsevier",
}


def _files(path: Union[str, Path]) -> list[Path]:
    path = Path(path)
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.is_file() and not p.name.startswith("."))
    if not path.exists():
        raise CorpusError(f"corpus path {path} does not exist")
    return [path]


def _build_dialog(key: str, turns: RawTurns, max_turns: Optional[int]) -> Dialog:
    merged: list[tuple[Role, str]] = []
    next_role = Role.USER
    for role, text in turns:
        text = normalize_text(text)
        if not text:
            continue
        role = role or next_role
        if merged and merged[-1][0] is role:
            merged[-1] = (role, f"{merged[-1][1]} {text}")
        else:
            merged.append((role, text))
        next_role = role.other
    if max_turns is not None:
        merged = merged[:max_turns]
    return Dialog(
        id=key,
        utterances=tuple(Utterance(text=t, role=r, origin=Origin.CORPUS) for r, t in merged),
    )


def _check_skips(name: str, total: int, skipped: int) -> None:
    if total and skipped / total > MAX_SKIP_FRACTION:
        raise CorpusError(
            f"corpus {name!r}: skipped {skipped} of {total} records (> {MAX_SKIP_FRACTION:.0%})"
        )


def load_dialog_corpus(desc: CorpusDescriptor, max_turns: Optional[int] = None) -> list[Dialog]:
    if desc.kind is CorpusKind.TEXT_PASSAGES:
        raise CorpusError(f"corpus {desc.name!r} holds passages, not dialogs")
    try:
        adapter = DIALOG_ADAPTERS[desc.adapter_id]
    except KeyError:
        raise CorpusError(f"no dialog adapter {desc.adapter_id!r} for corpus {desc.name!r}") from None
    dialogs: list[Dialog] = []
    total = skipped = non_questions = 0
    seen: set[str] = set()
    for file in _files(desc.path):
        for key, turns in adapter(file):
            total += 1
            if isinstance(turns, Exception):
                skipped += 1
                log.debug("skipping %s: %s", key, turns)
                continue
            d = _build_dialog(key, turns, max_turns)
            if validate_dialog(d) or d.id in seen:
                skipped += 1
                continue
            seen.add(d.id)
            if desc.kind is CorpusKind.CONVQA_DIALOG:
                non_questions += sum(
                    1 for u in d.utterances if u.role is Role.USER and not u.text.endswith("?")
                )
            dialogs.append(d)
    _check_skips(desc.name, total, skipped)
    if non_questions:
        log.info("%s: %d USER turns do not end with '?'", desc.name, non_questions)
    mean = sum(len(d) for d in dialogs) / len(dialogs) if dialogs else 0.0
    log.info("%s: loaded %d dialogs (mean %.2f turns, %d skipped)", desc.name, len(dialogs), mean, skipped)
    return dialogs


def load_dialog_corpora(descs: Sequence[CorpusDescriptor], max_turns: Optional[int] = None) -> list[DialogCorpus]:
    return [DialogCorpus(d, tuple(load_dialog_corpus(d, max_turns))) for d in descs]


def _field(rec: dict[str, Any], dotted: str) -> Any:
    value: Any = rec
    for part in dotted.split("."):
        value = value[part]
    return value


def load_passages(desc: CorpusDescriptor, segmenter: Optional[Segmenter] = None) -> list[Passage]:
    try:
        id_f, title_f, text_f = PASSAGE_FIELDS[desc.adapter_id]
    except KeyError:
        raise CorpusError(f"no passage adapter {desc.adapter_id!r} for corpus {desc.name!r}") from None
    passages: list[Passage] = []
    total = skipped = 0
    for file in _files(desc.path):
        for lineno, rec in _iter_json_lines(file):
            total += 1
            try:
                if isinstance(rec, Exception):
                    raise rec
                text = _field(rec, text_f)
                if isinstance(text, list):
                    text = " ".join(str(t) for t in text)
                title = str(_field(rec, title_f))
                try:
                    pid = str(_field(rec, id_f))
                except (KeyError, TypeError):
                    pid = None
                passages.append(segment_passage(str(text), title, segmenter, passage_id=pid))
            except (KeyError, TypeError, ValueError) as exc:
                skipped += 1
                log.debug("skipping %s:%d: %s", file.name, lineno, exc)
    _check_skips(desc.name, total, skipped)
    return passages


def write_passages(passages: Sequence[Passage], path: Union[str, Path]) -> None:
    lines = [
        json.dumps({"id": p.id, "title": p.title, "text": p.raw_text}, ensure_ascii=False)
        for p in passages
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- registry --------------------------------------------------------------------


def load_registry(path: Union[str, Path]) -> dict[str, CorpusDescriptor]:
    """Read a corpus registry: ``{"corpora": {name: {kind, path, adapter?}}}``.

    Relative corpus paths resolve against the registry file's directory.
    """
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    out = {}
    for name, entry in data.get("corpora", {}).items():
        corpus_path = Path(entry["path"])
        if not corpus_path.is_absolute():
            corpus_path = path.parent / corpus_path
        out[name] = CorpusDescriptor(
            name=name, kind=CorpusKind(entry["kind"]), path=str(corpus_path), adapter=entry.get("adapter")
        )
    return out


def descriptor_from_dict(entry: dict[str, Any], base: Optional[Path] = None) -> CorpusDescriptor:
    corpus_path = Path(entry["path"])
    if base is not None and not corpus_path.is_absolute():
        corpus_path = base / corpus_path
    return CorpusDescriptor(
        name=entry["name"], kind=CorpusKind(entry["kind"]), path=str(corpus_path), adapter=entry.get("adapter")
    )
