"""Config files, run manifests and the end-to-end runs behind the CLI."""

from __future__ import annotations

import datetime as _dt
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

from . import __version__
from .backend import GeneratorBackend, create_backend
from .corpus import (
    CorpusDescriptor,
    CorpusKind,
    descriptor_from_dict,
    load_dialog_corpora,
    load_passages,
    load_registry,
)
from .dialog import ConvQADataset, Passage, write_dataset
from .evaluation import EvaluationReport, evaluate_dataset, get_metric
from .inpaint import GenerationConfig, inpaint_corpus
from .keywords import get_extractor
from .rerank import get_scorer
from .tasks import Task
from .trainer import TrainingConfig, corpus_manifest, load_checkpoint, train

log = logging.getLogger(__name__)

RUN_MANIFEST = "run_manifest.json"


class ConfigError(ValueError):
    pass


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config: dict[str, Any]
    seed: Optional[int]
    corpora: list[dict[str, Any]] = field(default_factory=list)
    code_version: str = __version__
    started: str = field(default_factory=_now)
    finished: Optional[str] = None
    outputs: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "corpora": self.corpora,
            "code_version": self.code_version,
            "started": self.started,
            "finished": self.finished,
            "outputs": self.outputs,
        }

    def write(self, path: Union[str, Path]) -> Path:
        self.finished = self.finished or _now()
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def manifest_path_for(output: Union[str, Path]) -> Path:
    output = Path(output)
    if output.is_dir():
        return output / RUN_MANIFEST
    return output.with_name(output.name + "." + RUN_MANIFEST)


def read_json(path: Union[str, Path]) -> dict[str, Any]:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc


def resolve_corpora(config: dict[str, Any], base: Path) -> list[CorpusDescriptor]:
    """Corpus descriptors from ``corpora`` entries and/or a ``registry`` + ``use`` list."""
    descs = [descriptor_from_dict(entry, base) for entry in config.get("corpora", [])]
    if "registry" in config:
        registry = load_registry(base / config["registry"])
        for name in config.get("use", sorted(registry)):
            if name not in registry:
                raise ConfigError(f"corpus {name!r} is not in the registry")
            descs.append(registry[name])
    return descs


def read_passages(path: Union[str, Path], adapter: Optional[str] = None, name: str = "passages") -> list[Passage]:
    return load_passages(CorpusDescriptor(name, CorpusKind.TEXT_PASSAGES, str(path), adapter))


# -- training -----------------------------------------------------------------------


def run_training(config: dict[str, Any], base: Path, out_dir: Union[str, Path],
                 overrides: Optional[dict[str, Any]] = None, command: str = "train") -> tuple[Path, RunManifest]:
    """Train from a config dict into ``out_dir/{checkpoint/, metrics.jsonl, run_manifest.json}``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    training = dict(config.get("training", {}))
    training.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        cfg = TrainingConfig.from_dict(training)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    descs = resolve_corpora(config, base)
    dialog_descs = [d for d in descs if d.kind is not CorpusKind.TEXT_PASSAGES]
    if not dialog_descs:
        raise ConfigError("config names no dialog corpora")
    corpora = load_dialog_corpora(dialog_descs, config.get("max_turns"))
    backend = create_backend(config.get("backend", "trainable-stub"), **config.get("backend_options", {}))
    manifest = RunManifest(
        command=command,
        config={"training": cfg.to_dict(), "backend": backend.name,
                "backend_options": config.get("backend_options", {}), "max_turns": config.get("max_turns"),
                "tasks": [t.value for t in cfg.tasks]},
        seed=cfg.seed,
        corpora=corpus_manifest(corpora),
    )
    result = train(corpora, cfg, backend, output_dir=out_dir / "checkpoint",
                   metrics_path=out_dir / "metrics.jsonl")
    manifest.outputs = [str(result.checkpoint), str(out_dir / "metrics.jsonl")]
    manifest.write(out_dir / RUN_MANIFEST)
    return result.checkpoint, manifest


# -- generation ---------------------------------------------------------------------


def open_backend(checkpoint: Optional[Union[str, Path]], backend_name: str = "stub") -> GeneratorBackend:
    if checkpoint:
        return load_checkpoint(checkpoint)[0]
    return create_backend(backend_name)


def generate_dataset(passages: Sequence[Passage], backend: GeneratorBackend, gen: GenerationConfig,
                     scorer_name: str = "lexical-overlap", extractor_name: str = "frequency",
                     name: str = "generated", workers: int = 1) -> ConvQADataset:
    scorer = get_scorer(scorer_name) if gen.rerank else None
    return inpaint_corpus(passages, backend, get_extractor(extractor_name), scorer, gen, name=name, workers=workers)


# -- ablation -------------------------------------------------------------------------

TASK_COMBOS = {
    "DR": (False, False),
    "DR+QAM": (True, False),
    "DR+TDG": (False, True),
    "DR+QAM+TDG": (True, True),
}


@dataclass
class AblationCell:
    tasks: tuple[str, ...]
    rerank: bool
    means: dict[str, float]
    dataset: str

    @property
    def key(self) -> str:
        return f"{'+'.join(self.tasks)}|{'rerank' if self.rerank else 'no-rerank'}"


def run_ablation(grid: dict[str, Any], base: Path, out_dir: Union[str, Path]) -> list[AblationCell]:
    """Train each task combination, generate with and without re-ranking, and score every cell.

    Grid keys: ``corpora``/``registry`` (training dialogs), ``passages`` (text
    to inpaint), ``training`` (shared config), ``lambda`` (weight of an
    enabled task, default 0.1), ``backend``, ``metrics``, ``scorer``,
    ``generation`` (``beam_size``, ``max_keywords``).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    weight = float(grid.get("lambda", 0.1))
    passages = read_passages(base / grid["passages"], grid.get("passages_adapter"))
    metrics = [get_metric(m) if isinstance(m, str) else get_metric(m["name"], **m.get("options", {}))
               for m in grid.get("metrics", ["lexical-overlap"])]
    gen_opts = dict(grid.get("generation", {}))
    scorer_name = grid.get("scorer", "lexical-overlap")
    cells: list[AblationCell] = []
    for combo, (qam, tdg) in TASK_COMBOS.items():
        combo_dir = out_dir / combo.replace("+", "_")
        train_cfg = dict(grid, training=dict(grid.get("training", {}),
                                             lambda_qam=weight if qam else 0.0,
                                             lambda_tdg=weight if tdg else 0.0))
        checkpoint, _ = run_training(train_cfg, base, combo_dir / "train", command="ablate:train")
        backend = load_checkpoint(checkpoint)[0]
        tasks = tuple(t.value for t, on in ((Task.DR, True), (Task.QAM, qam), (Task.TDG, tdg)) if on)
        for rerank in (False, True):
            gen = GenerationConfig(rerank=rerank, candidate_retention=True, **gen_opts)
            ds = generate_dataset(passages, backend, gen, scorer_name, name=f"{combo}-{'rr' if rerank else 'greedy'}")
            cell_dir = combo_dir / ("rerank" if rerank else "no_rerank")
            cell_dir.mkdir(parents=True, exist_ok=True)
            ds_path = write_dataset(ds, cell_dir / "dataset.jsonl")
            report: EvaluationReport = evaluate_dataset(ds, metrics)
            cell = AblationCell(tasks, rerank, report.means, str(ds_path))
            RunManifest(
                command="ablate:cell",
                config={"tasks": list(tasks), "rerank": rerank, "checkpoint": str(checkpoint),
                        "generation": gen_opts, "scorer": scorer_name if rerank else None,
                        "metrics": [m.name for m in metrics]},
                seed=grid.get("training", {}).get("seed", 0),
                outputs=[str(ds_path)],
            ).write(cell_dir / RUN_MANIFEST)
            cells.append(cell)
    table = [{"tasks": "+".join(c.tasks), "rerank": c.rerank, **c.means} for c in cells]
    (out_dir / "ablation.json").write_text(json.dumps(table, indent=2) + "\n", encoding="utf-8")
    return cells


def format_ablation_table(cells: Sequence[AblationCell]) -> str:
    metric_names = sorted({m for c in cells for m in c.means})
    header = ["tasks", "rerank", *metric_names]
    rows = [header] + [
        ["+".join(c.tasks), "yes" if c.rerank else "no", *(f"{c.means.get(m, float('nan')):.4f}" for m in metric_names)]
        for c in cells
    ]
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows)
