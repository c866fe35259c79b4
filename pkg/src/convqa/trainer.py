"""Multi-task training loop: reconstruction plus weighted QA matching and keyword-guided generation."""

from __future__ import annotations

import json
import logging
import math
import random
import shutil
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Iterator, Optional, Sequence, Union

from . import __version__
from .backend import GeneratorBackend, WeightedExample, load_backend
from .corpus import DialogCorpus
from .dialog import Dialog, Role, dialog_fingerprint
from .keywords import DEFAULT_MAX_KEYWORDS, FrequencyKeywordExtractor, KeywordExtractor
from .tasks import (
    NotEnoughPairs,
    Task,
    TrainingExample,
    answer_after,
    build_dr_example,
    build_qam_examples,
    build_tdg_example,
)

log = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
BACKEND_DIR = "backend"


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainingConfig:
    lambda_qam: float = 0.1
    lambda_tdg: float = 0.1
    learning_rate: float = 5e-5
    batch_size: int = 8
    grad_accum_steps: int = 8
    max_grad_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    warmup_steps: int = 0
    epochs: int = 3
    seed: int = 0
    max_steps: Optional[int] = None
    checkpoint_every: int = 0
    max_keywords: int = DEFAULT_MAX_KEYWORDS

    def __post_init__(self) -> None:
        for name in ("lambda_qam", "lambda_tdg", "weight_decay"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be a finite number >= 0, got {value!r}")
        for name in ("learning_rate", "batch_size", "grad_accum_steps", "max_grad_norm",
                     "epsilon", "epochs", "max_keywords"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be > 0, got {value!r}")
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.warmup_steps < 0 or self.checkpoint_every < 0:
            raise ValueError("warmup_steps and checkpoint_every must be >= 0")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1 when given")

    @property
    def effective_batch_size(self) -> int:
        return self.batch_size * self.grad_accum_steps

    @property
    def tasks(self) -> tuple[Task, ...]:
        out = [Task.DR]
        if self.lambda_qam > 0:
            out.append(Task.QAM)
        if self.lambda_tdg > 0:
            out.append(Task.TDG)
        return tuple(out)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**data)


def combined_loss(l_dr: float, l_qam: float, l_tdg: float, cfg: TrainingConfig) -> float:
    for name, value in (("l_dr", l_dr), ("l_qam", l_qam), ("l_tdg", l_tdg)):
        if not math.isfinite(value):
            raise ValueError(f"{name} is not finite: {value!r}")
        if value < 0:
            raise ValueError(f"{name} is negative: {value!r}")
    return l_dr + cfg.lambda_qam * l_qam + cfg.lambda_tdg * l_tdg


# -- example stream ------------------------------------------------------------


def _dr_examples(dialogs: Sequence[Dialog], seed: int, epoch: int, sentinel: str) -> list[TrainingExample]:
    rng = random.Random(f"{seed}:dr:{epoch}")
    order = list(range(len(dialogs)))
    rng.shuffle(order)
    return [build_dr_example(dialogs[i], rng_seed=rng.getrandbits(32), sentinel=sentinel) for i in order]


def _qam_examples(dialogs: Sequence[Dialog], seed: int, epoch: int) -> list[TrainingExample]:
    rng = random.Random(f"{seed}:qam:{epoch}")
    order = list(range(len(dialogs)))
    rng.shuffle(order)
    out: list[TrainingExample] = []
    for i in order:
        draw = rng.getrandbits(32)
        try:
            out.extend(build_qam_examples(dialogs[i], rng_seed=draw))
        except NotEnoughPairs:
            continue
    return out


def _tdg_examples(dialogs: Sequence[Dialog], seed: int, epoch: int, sentinel: str,
                  extractor: KeywordExtractor, max_keywords: int) -> list[TrainingExample]:
    rng = random.Random(f"{seed}:tdg:{epoch}")
    order = list(range(len(dialogs)))
    rng.shuffle(order)
    out: list[TrainingExample] = []
    for i in order:
        d = dialogs[i]
        slots = [t for t, u in enumerate(d.utterances) if u.role is Role.USER and answer_after(d, t)]
        if not slots:
            continue
        t = slots[rng.randrange(len(slots))]
        context = [u.text for u in d.utterances if u.role is Role.AGENT]
        keywords = extractor.extract(answer_after(d, t), max_keywords, context=context)
        if keywords:
            out.append(build_tdg_example(d, t, keywords, sentinel=sentinel))
    return out


def example_stream(corpora: Sequence[DialogCorpus], cfg: TrainingConfig, sentinel: str,
                   extractor: Optional[KeywordExtractor] = None) -> Iterator[TrainingExample]:
    """The canonical, seeded order of training examples.

    Each epoch builds one reconstruction example per dialog of every corpus,
    plus (when their weight is non-zero) QA-matching and keyword-generation
    examples from the ConvQA corpora. The per-task lists are drawn from
    independent seeded generators and interleaved by a seeded shuffle of task
    labels, so the reconstruction subsequence is identical whatever the task
    weights are. The stream repeats epochs forever when ``cfg.max_steps`` is
    set, otherwise it stops after ``cfg.epochs``.
    """
    extractor = extractor or FrequencyKeywordExtractor()
    all_dialogs = [d for c in corpora for d in c.dialogs]
    convqa = [d for c in corpora if c.is_convqa for d in c.dialogs]
    epoch = 0
    while cfg.max_steps is not None or epoch < cfg.epochs:
        streams = {Task.DR: _dr_examples(all_dialogs, cfg.seed, epoch, sentinel)}
        if cfg.lambda_qam > 0:
            streams[Task.QAM] = _qam_examples(convqa, cfg.seed, epoch)
        if cfg.lambda_tdg > 0:
            streams[Task.TDG] = _tdg_examples(convqa, cfg.seed, epoch, sentinel, extractor, cfg.max_keywords)
        labels = [task for task, items in streams.items() for _ in items]
        random.Random(f"{cfg.seed}:mix:{epoch}").shuffle(labels)
        cursors = {task: iter(items) for task, items in streams.items()}
        for task in labels:
            yield next(cursors[task])
        epoch += 1


def accumulation_windows(stream: Iterator[TrainingExample], cfg: TrainingConfig
                         ) -> Iterator[list[list[TrainingExample]]]:
    """Chunk the stream into optimizer steps of ``grad_accum_steps`` micro-batches."""
    window: list[TrainingExample] = []
    size = cfg.effective_batch_size
    for ex in stream:
        window.append(ex)
        if len(window) == size:
            yield [window[i:i + cfg.batch_size] for i in range(0, size, cfg.batch_size)]
            window = []
    if window:
        yield [window[i:i + cfg.batch_size] for i in range(0, len(window), cfg.batch_size)]


# -- checkpoints -----------------------------------------------------------------


def corpus_manifest(corpora: Sequence[DialogCorpus]) -> list[dict[str, Any]]:
    return [
        dict(c.descriptor.to_dict(), dialogs=len(c.dialogs), fingerprint=dialog_fingerprint(c.dialogs))
        for c in corpora
    ]


def save_checkpoint(path: Union[str, Path], backend: GeneratorBackend, manifest: dict[str, Any]) -> Path:
    """Write ``{manifest.json, backend/}`` without ever leaving a half-written checkpoint."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    old = path.with_name(path.name + ".old")
    for stale in (tmp, old):
        if stale.exists():
            shutil.rmtree(stale)
    tmp.mkdir(parents=True)
    backend.save(tmp / BACKEND_DIR)
    (tmp / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if path.exists():
        path.rename(old)
    tmp.rename(path)
    if old.exists():
        shutil.rmtree(old)
    return path


def load_checkpoint(path: Union[str, Path]) -> tuple[GeneratorBackend, dict[str, Any]]:
    path = Path(path)
    manifest = json.loads((path / MANIFEST_FILE).read_text(encoding="utf-8"))
    return load_backend(path / BACKEND_DIR, manifest.get("backend")), manifest


# -- training loop ---------------------------------------------------------------


@dataclass
class StepRecord:
    step: int
    l_dr: Optional[float]
    l_qam: Optional[float]
    l_tdg: Optional[float]
    combined: float
    learning_rate: float
    examples: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class TrainResult:
    steps: list[StepRecord]
    checkpoint: Optional[Path]


def _learning_rate(cfg: TrainingConfig, step: int) -> float:
    if cfg.warmup_steps and step <= cfg.warmup_steps:
        return cfg.learning_rate * step / cfg.warmup_steps
    return cfg.learning_rate


def train(corpora: Sequence[DialogCorpus], cfg: TrainingConfig, backend: GeneratorBackend,
          output_dir: Union[str, Path, None] = None, metrics_path: Union[str, Path, None] = None,
          extractor: Optional[KeywordExtractor] = None) -> TrainResult:
    """Run the training loop; write the checkpoint to ``output_dir`` when given.

    Each step's loss for a task is the mean over that task's examples in the
    accumulation window. Example weights are ``lambda_task / n_task`` so the
    quantity the backend minimises is exactly :func:`combined_loss`.
    """
    if not any(c.dialogs for c in corpora):
        raise ValueError("training needs at least one non-empty dialog corpus")
    if (cfg.lambda_qam > 0 or cfg.lambda_tdg > 0) and not any(c.is_convqa and c.dialogs for c in corpora):
        raise ValueError("QAM/TDG weights are non-zero but no ConvQA corpus was given")
    backend.configure(cfg)
    weights = {Task.DR: 1.0, Task.QAM: cfg.lambda_qam, Task.TDG: cfg.lambda_tdg}
    manifest_base = {
        "kind": "checkpoint",
        "backend": backend.name,
        "config": cfg.to_dict(),
        "tasks": [t.value for t in cfg.tasks],
        "corpora": corpus_manifest(corpora),
        "code_version": __version__,
    }
    metrics_fh = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    records: list[StepRecord] = []
    checkpoint: Optional[Path] = None
    try:
        windows = accumulation_windows(example_stream(corpora, cfg, backend.mask_sentinel, extractor), cfg)
        for step, window in enumerate(windows, 1):
            counts = {t: 0 for t in Task}
            for mb in window:
                for ex in mb:
                    counts[ex.task] += 1
            batch = [[WeightedExample(ex, weights[ex.task] / counts[ex.task]) for ex in mb] for mb in window]
            lr = _learning_rate(cfg, step)
            try:
                losses = backend.train_step(batch, lr)
            except Exception as exc:
                where = f"; last good checkpoint at {checkpoint}" if checkpoint else ""
                raise TrainingError(f"backend failed at step {step}: {exc}{where}") from exc
            sums = {t: 0.0 for t in Task}
            for mb, mb_losses in zip(window, losses):
                for ex, value in zip(mb, mb_losses):
                    sums[ex.task] += value
            means = {t: (sums[t] / counts[t] if counts[t] else None) for t in Task}
            total = combined_loss(*(means[t] or 0.0 for t in (Task.DR, Task.QAM, Task.TDG)), cfg)
            rec = StepRecord(step, means[Task.DR], means[Task.QAM], means[Task.TDG], total, lr,
                             sum(counts.values()))
            records.append(rec)
            if metrics_fh:
                metrics_fh.write(json.dumps(rec.to_dict()) + "\n")
                metrics_fh.flush()
            if output_dir and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                checkpoint = save_checkpoint(output_dir, backend, dict(manifest_base, step=step))
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
    finally:
        if metrics_fh:
            metrics_fh.close()
    if output_dir:
        checkpoint = save_checkpoint(output_dir, backend, dict(manifest_base, step=len(records)))
    log.info("trained %d steps; final combined loss %.4f", len(records), records[-1].combined if records else float("nan"))
    return TrainResult(records, checkpoint)
