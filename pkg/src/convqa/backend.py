"""Sequence-to-sequence backends.

The toolkit talks to a model only through :class:`GeneratorBackend`. A real
encoder-decoder is one plug-in; the two backends shipped here are
deterministic stand-ins that make the whole pipeline runnable and testable
without model weights:

``stub``
    Hash-based losses and template questions built from the keyword prompt
    (or, without one, from the answer after the mask).
``trainable-stub``
    The same templates, but losses and candidate scores come from a small
    hashed linear model trained with AdamW, so training runs actually learn.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Optional, Protocol, Sequence, Union, runtime_checkable

import numpy as np

from . import plugins
from .dialog import Candidate, CandidateSet
from .keywords import KEYWORD_PREFIX, FrequencyKeywordExtractor
from .render import DEFAULT_SENTINEL, ROLE_PREFIX, TURN_SEPARATOR
from .dialog import Role
from .tasks import TrainingExample

BACKEND_FILE = "backend.json"


class BackendError(RuntimeError):
    pass


@dataclass(frozen=True)
class WeightedExample:
    example: TrainingExample
    weight: float


@runtime_checkable
class GeneratorBackend(Protocol):
    name: str
    mask_sentinel: str

    def loss(self, input_text: str, target_text: str) -> float: ...

    def generate(self, input_text: str, k: int) -> CandidateSet: ...

    def configure(self, cfg: Any) -> None: ...

    def train_step(self, micro_batches: Sequence[Sequence[WeightedExample]],
                   learning_rate: float) -> list[list[float]]: ...

    def save(self, path: Union[str, Path]) -> None: ...


def stable_hash(*parts: str) -> int:
    h = hashlib.blake2b("\x1f".join(parts).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "big")


QUESTION_TEMPLATES = (
    "What about {topic}?",
    "Are there any other interesting aspects about this article?",
    "Can you tell me more about {topic}?",
    "What is known about {topic}?",
    "How is {topic} described?",
    "Why does {topic} matter?",
    "What else is there to know?",
    "Where does {topic} come up?",
)

_KEYWORD_SLOT = re.compile(re.escape(KEYWORD_PREFIX) + r"(.*) $")


def parse_masked_input(input_text: str, sentinel: str) -> tuple[list[str], str]:
    """Keywords prompted before the sentinel and the answer right after it."""
    if input_text.count(sentinel) != 1:
        raise BackendError(f"input must contain exactly one {sentinel!r}")
    before, after = input_text.split(sentinel)
    keywords: list[str] = []
    last_turn = before.rsplit(ROLE_PREFIX[Role.USER], 1)[-1]
    m = _KEYWORD_SLOT.match(last_turn)
    if m:
        keywords = [k for k in m.group(1).split(", ") if k]
    answer = after
    agent = TURN_SEPARATOR + ROLE_PREFIX[Role.AGENT]
    if answer.startswith(agent):
        answer = answer[len(agent):]
    answer = answer.split(TURN_SEPARATOR + ROLE_PREFIX[Role.USER], 1)[0].strip()
    return keywords, answer


class StubBackend:
    """Deterministic backend: hashed losses, template candidates, no learning."""

    name = "stub"

    def __init__(self, mask_sentinel: str = DEFAULT_SENTINEL, templates: Sequence[str] = QUESTION_TEMPLATES):
        self.mask_sentinel = mask_sentinel
        self.templates = tuple(templates)
        self._extractor = FrequencyKeywordExtractor()

    def candidate_pool(self, input_text: str) -> list[str]:
        """Distinct template questions for the masked slot.

        The pool depends only on the keyword prompt and the answer, never on
        earlier dialog turns.
        """
        keywords, answer = parse_masked_input(input_text, self.mask_sentinel)
        if not keywords:
            keywords = self._extractor.extract(answer, 2) if answer else []
        topic = " and ".join(keywords) if keywords else "this"
        pool: list[str] = []
        for template in self.templates:
            text = template.format(topic=topic)
            if text not in pool:
                pool.append(text)
        return pool

    def candidate_score(self, input_text: str, candidate: str) -> float:
        return -(stable_hash(self.name, input_text, candidate) % 10_000) / 1000.0

    def generate(self, input_text: str, k: int) -> CandidateSet:
        """Top ``k`` of one fixed ranking, so a smaller beam is a prefix of a larger one."""
        if k < 1:
            raise ValueError("beam size must be >= 1")
        pool = self.candidate_pool(input_text)
        scored = sorted(
            ((self.candidate_score(input_text, c), i, c) for i, c in enumerate(pool)),
            key=lambda item: (-item[0], item[1]),
        )[:k]
        return CandidateSet(tuple(Candidate(text=c, model_score=s) for s, _, c in scored))

    def loss(self, input_text: str, target_text: str) -> float:
        return 1.0 + (stable_hash(self.name, "loss", input_text, target_text) % 1000) / 1000.0

    def configure(self, cfg: Any) -> None:
        pass

    def train_step(self, micro_batches: Sequence[Sequence[WeightedExample]],
                   learning_rate: float) -> list[list[float]]:
        return [[self.loss(w.example.input_text, w.example.target_text) for w in mb] for mb in micro_batches]

    def config_dict(self) -> dict[str, Any]:
        return {"backend": self.name, "mask_sentinel": self.mask_sentinel, "templates": list(self.templates)}

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        (path / BACKEND_FILE).write_text(json.dumps(self.config_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "StubBackend":
        cfg = json.loads((Path(path) / BACKEND_FILE).read_text(encoding="utf-8"))
        return cls(mask_sentinel=cfg["mask_sentinel"], templates=cfg["templates"])


_WORD = re.compile(r"\w+|[^\w\s]")


@lru_cache(maxsize=200_000)
def _bucket(salt: str, token: str, size: int) -> int:
    return stable_hash(salt, token) % size


class HashedLinearBackend(StubBackend):
    """Template candidates ranked by a tiny trainable model.

    For target position ``i`` the logits over ``vocab_size`` hashed target
    tokens are ``sum(W[f]) + b`` where ``f`` ranges over hashed
    (input token, i) features. Loss is the mean token negative
    log-likelihood; optimization is AdamW with global-norm clipping.
    """

    name = "trainable-stub"

    def __init__(self, mask_sentinel: str = DEFAULT_SENTINEL, templates: Sequence[str] = QUESTION_TEMPLATES,
                 num_features: int = 2048, vocab_size: int = 256, max_target_tokens: int = 24,
                 seed: int = 0):
        super().__init__(mask_sentinel, templates)
        self.num_features = num_features
        self.vocab_size = vocab_size
        self.max_target_tokens = max_target_tokens
        self.seed = seed
        self.W = np.zeros((num_features, vocab_size))
        self.b = np.zeros(vocab_size)
        self._m = [np.zeros_like(self.W), np.zeros_like(self.b)]
        self._v = [np.zeros_like(self.W), np.zeros_like(self.b)]
        self.steps_taken = 0
        self.beta1, self.beta2, self.epsilon = 0.9, 0.999, 1e-8
        self.max_grad_norm = 1.0
        self.weight_decay = 0.0

    def configure(self, cfg: Any) -> None:
        self.beta1, self.beta2, self.epsilon = cfg.beta1, cfg.beta2, cfg.epsilon
        self.max_grad_norm = cfg.max_grad_norm
        self.weight_decay = cfg.weight_decay

    def _features(self, input_text: str, n_positions: int) -> list[np.ndarray]:
        tokens = sorted(set(_WORD.findall(input_text.lower())))
        feats = []
        for i in range(n_positions):
            pos = str(i)
            idx = {_bucket("bias", pos, self.num_features)}
            idx.update(_bucket(pos, tok, self.num_features) for tok in tokens)
            feats.append(np.fromiter(sorted(idx), dtype=np.int64))
        return feats

    def _targets(self, target_text: str) -> np.ndarray:
        tokens = _WORD.findall(target_text.lower())[: self.max_target_tokens - 1] + ["</s>"]
        return np.array([_bucket("vocab", t, self.vocab_size) for t in tokens], dtype=np.int64)

    def _forward(self, input_text: str, target_text: str):
        y = self._targets(target_text)
        feats = self._features(input_text, len(y))
        logits = np.stack([self.W[f].sum(axis=0) for f in feats]) + self.b
        logits -= logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        loss = float(-logp[np.arange(len(y)), y].mean())
        return loss, y, feats, logp

    def loss(self, input_text: str, target_text: str) -> float:
        return self._forward(input_text, target_text)[0]

    def candidate_score(self, input_text: str, candidate: str) -> float:
        return -self.loss(input_text, candidate)

    def train_step(self, micro_batches: Sequence[Sequence[WeightedExample]],
                   learning_rate: float) -> list[list[float]]:
        gW = np.zeros_like(self.W)
        gb = np.zeros_like(self.b)
        losses: list[list[float]] = []
        for mb in micro_batches:
            mb_losses = []
            for item in mb:
                loss, y, feats, logp = self._forward(item.example.input_text, item.example.target_text)
                if not np.isfinite(loss):
                    raise BackendError(f"non-finite loss on example from {item.example.source_dialog_id!r}")
                mb_losses.append(loss)
                if item.weight == 0.0:
                    continue
                g = np.exp(logp)
                g[np.arange(len(y)), y] -= 1.0
                g *= item.weight / len(y)
                for f, gi in zip(feats, g):
                    gW[f] += gi
                gb += g.sum(axis=0)
            losses.append(mb_losses)
        self._apply_update([gW, gb], learning_rate)
        return losses

    def _apply_update(self, grads: list[np.ndarray], lr: float) -> None:
        norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
        if self.max_grad_norm and norm > self.max_grad_norm:
            scale = self.max_grad_norm / (norm + 1e-6)
            grads = [g * scale for g in grads]
        self.steps_taken += 1
        t = self.steps_taken
        for p, g, m, v in zip((self.W, self.b), grads, self._m, self._v):
            if self.weight_decay:
                p *= 1.0 - lr * self.weight_decay
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1 ** t)
            v_hat = v / (1 - self.beta2 ** t)
            p -= lr * m_hat / (np.sqrt(v_hat) + self.epsilon)

    def config_dict(self) -> dict[str, Any]:
        cfg = super().config_dict()
        cfg.update(num_features=self.num_features, vocab_size=self.vocab_size,
                   max_target_tokens=self.max_target_tokens, seed=self.seed,
                   steps_taken=self.steps_taken)
        return cfg

    def save(self, path: Union[str, Path]) -> None:
        super().save(path)
        np.savez(Path(path) / "weights.npz", W=self.W, b=self.b,
                 mW=self._m[0], mb=self._m[1], vW=self._v[0], vb=self._v[1])

    @classmethod
    def load(cls, path: Union[str, Path]) -> "HashedLinearBackend":
        path = Path(path)
        cfg = json.loads((path / BACKEND_FILE).read_text(encoding="utf-8"))
        backend = cls(mask_sentinel=cfg["mask_sentinel"], templates=cfg["templates"],
                      num_features=cfg["num_features"], vocab_size=cfg["vocab_size"],
                      max_target_tokens=cfg["max_target_tokens"], seed=cfg["seed"])
        with np.load(path / "weights.npz") as z:
            backend.W, backend.b = z["W"].copy(), z["b"].copy()
            backend._m = [z["mW"].copy(), z["mb"].copy()]
            backend._v = [z["vW"].copy(), z["vb"].copy()]
        backend.steps_taken = cfg["steps_taken"]
        return backend


class RecordingBackend:
    """Wrap a backend and remember every ``generate`` input."""

    def __init__(self, inner: GeneratorBackend):
        self.inner = inner
        self.calls: list[tuple[str, int]] = []

    def __getattr__(self, attr: str) -> Any:
        return getattr(self.inner, attr)

    def generate(self, input_text: str, k: int) -> CandidateSet:
        self.calls.append((input_text, k))
        return self.inner.generate(input_text, k)


BACKENDS = {"stub": StubBackend, "trainable-stub": HashedLinearBackend}


def create_backend(name: str, **kwargs: Any) -> GeneratorBackend:
    return plugins.create(name, BACKENDS, "backend", **kwargs)


def load_backend(path: Union[str, Path], name: Optional[str] = None) -> GeneratorBackend:
    path = Path(path)
    if name is None:
        name = json.loads((path / BACKEND_FILE).read_text(encoding="utf-8"))["backend"]
    cls = plugins.resolve(name, BACKENDS, "backend")
    return cls.load(path)
