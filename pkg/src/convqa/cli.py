"""Command-line entry point.

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .dialog import dialog_fingerprint, read_dataset, write_dataset
from .evaluation import (
    JUDGE_ENDPOINT_ENV,
    JudgeClient,
    QuestionTypeOntology,
    RuleQuestionClassifier,
    dataset_statistics,
    evaluate_dataset,
    get_metric,
    judge_prompts_for,
    question_type_distribution,
)
from .experiments import (
    RunManifest,
    format_ablation_table,
    generate_dataset,
    manifest_path_for,
    open_backend,
    read_json,
    read_passages,
    run_ablation,
    run_training,
)
from .inpaint import GenerationConfig
from .keywords import DEFAULT_MAX_KEYWORDS
from .retrieval import (
    build_pairs,
    get_retriever,
    load_beir_benchmark,
    read_pairs,
    read_ranking,
    run_zeroshot_eval,
    write_pairs,
)

log = logging.getLogger("convqa")


class UsageError(Exception):
    pass


def _write_json(obj, path: Optional[str]) -> None:
    text = json.dumps(obj, indent=2, ensure_ascii=False)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_train(args: argparse.Namespace) -> int:
    config_path = Path(args.config)
    if not config_path.is_file():
        raise UsageError(f"config file {config_path} not found")
    config = read_json(config_path)
    if args.backend:
        config["backend"] = args.backend
    out = args.out or config.get("output")
    if not out:
        raise UsageError("no output directory: pass --out or set 'output' in the config")
    overrides = {"lambda_qam": args.lambda_qam, "lambda_tdg": args.lambda_tdg,
                 "seed": args.seed, "max_steps": args.max_steps}
    checkpoint, manifest = run_training(config, config_path.parent, out, overrides)
    print(f"checkpoint written to {checkpoint}")
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    passages = read_passages(args.passages, args.adapter)
    backend = open_backend(args.checkpoint, args.backend)
    gen = GenerationConfig(beam_size=args.beam_size, rerank=args.rerank, max_keywords=args.keywords,
                           candidate_retention=args.retain_candidates,
                           max_question_length=args.max_question_length)
    ds = generate_dataset(passages, backend, gen, args.scorer, args.extractor,
                          name=args.name or Path(args.out).stem, workers=args.workers)
    out = write_dataset(ds, args.out)
    RunManifest(
        command="generate",
        config={"checkpoint": args.checkpoint, "backend": backend.name, "beam_size": args.beam_size,
                "rerank": args.rerank, "scorer": args.scorer if args.rerank else None,
                "keywords": args.keywords, "extractor": args.extractor,
                "retain_candidates": args.retain_candidates, "max_question_length": args.max_question_length,
                "passages": str(args.passages)},
        seed=args.seed,
        corpora=[{"name": "passages", "path": str(args.passages), "passages": len(passages)}],
        outputs=[str(out)],
    ).write(manifest_path_for(out))
    print(f"wrote {len(ds)} dialogs to {out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    ds = read_dataset(args.dataset)
    metrics = [get_metric(name) for name in (args.metric or ["lexical-overlap"])]
    report = evaluate_dataset(ds, metrics).to_dict()
    if args.question_types:
        ontology = QuestionTypeOntology.load(args.ontology)
        report["question_types"] = question_type_distribution(ds, RuleQuestionClassifier(), ontology).to_dict()
    _write_json(report, args.out)
    if args.out:
        RunManifest("evaluate", {"metrics": [m.name for m in metrics], "question_types": args.question_types},
                    None, [{"dataset": args.dataset, "fingerprint": dialog_fingerprint(ds.dialogs)}],
                    outputs=[args.out]).write(manifest_path_for(args.out))
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    stats = dataset_statistics(read_dataset(args.dataset))
    _write_json(stats.to_dict(), args.out)
    return 0


def cmd_judge_prompts(args: argparse.Namespace) -> int:
    prompts = judge_prompts_for(read_dataset(args.dataset_a), read_dataset(args.dataset_b))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    client = JudgeClient() if args.send else None
    for name, prompt in prompts:
        (out / f"{name}.txt").write_text(prompt, encoding="utf-8")
        if client:
            (out / f"{name}.judgment.txt").write_text(client.judge(prompt), encoding="utf-8")
    RunManifest("judge-prompts", {"dataset_a": args.dataset_a, "dataset_b": args.dataset_b, "send": args.send},
                None, outputs=[str(out)]).write(out / "run_manifest.json")
    print(f"wrote {len(prompts)} prompts to {out}")
    return 0


def cmd_retrieval_eval(args: argparse.Namespace) -> int:
    passages = {p.id: p for p in read_passages(args.passages, args.adapter)}
    if args.pairs:
        pairs = read_pairs(args.pairs, passages)
    elif args.dataset:
        pairs = build_pairs(read_dataset(args.dataset), passages, cap=args.cap)
    else:
        raise UsageError("pass --pairs or --dataset")
    if args.write_pairs:
        write_pairs(pairs, args.write_pairs)
    benchmark = load_beir_benchmark(args.benchmark, args.split)
    ranking = read_ranking(args.ranking) if args.ranking else None
    retriever = None
    if not ranking:
        try:
            retriever = get_retriever(args.retriever)
        except Exception as exc:  # noqa: BLE001 - plug-in unavailable
            raise RuntimeError(f"retriever {args.retriever!r} unavailable ({exc}); pass --ranking") from exc
    table = run_zeroshot_eval(pairs, retriever, benchmark, ks=args.k or [10], seeds=args.seeds or [0],
                              static_ranking=ranking)
    _write_json(table.to_dict(), args.out)
    if args.out:
        RunManifest("retrieval-eval", {"retriever": None if ranking else args.retriever, "ks": args.k or [10],
                                       "benchmark": str(args.benchmark), "pairs": len(pairs)},
                    (args.seeds or [0])[0], outputs=[args.out]).write(manifest_path_for(args.out))
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    grid_path = Path(args.grid)
    if not grid_path.is_file():
        raise UsageError(f"grid file {grid_path} not found")
    cells = run_ablation(read_json(grid_path), grid_path.parent, args.out)
    print(format_ablation_table(cells))
    RunManifest("ablate", {"grid": read_json(grid_path)}, None,
                outputs=[str(Path(args.out) / "ablation.json")]).write(Path(args.out) / "run_manifest.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convqa", description="Generate ConvQA dialog datasets by dialog inpainting.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an inpainting backend on dialog corpora")
    p.add_argument("--config", required=True, help="JSON config: corpora/registry, training, backend, output")
    p.add_argument("--out", help="run directory (overrides 'output' in the config)")
    p.add_argument("--backend", help="backend name or module:factory (overrides the config)")
    p.add_argument("--lambda-qam", type=float, help="weight of the QA-matching loss")
    p.add_argument("--lambda-tdg", type=float, help="weight of the keyword-guided generation loss")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="inpaint passages into a ConvQA dataset")
    p.add_argument("--passages", required=True, help="passage corpus (JSONL: id, title, text)")
    p.add_argument("--adapter", help="passage adapter (wikipedia, pubmed, ccnews, elsevier, passages-jsonl)")
    p.add_argument("--checkpoint", help="checkpoint directory written by 'train'")
    p.add_argument("--backend", default="stub", help="backend to use when no checkpoint is given")
    p.add_argument("--beam-size", type=int, default=5)
    p.add_argument("--rerank", action=argparse.BooleanOptionalAction, default=True,
                   help="pick the most relevant beam candidate (default on)")
    p.add_argument("--scorer", default="lexical-overlap", help="relevance scorer for re-ranking")
    p.add_argument("--keywords", type=int, default=DEFAULT_MAX_KEYWORDS, help="keywords per answer prompt")
    p.add_argument("--extractor", default="frequency", help="keyword extractor")
    p.add_argument("--max-question-length", type=int, default=64, help="longest allowed question in words")
    p.add_argument("--retain-candidates", action="store_true", help="store scored beam candidates in a sidecar")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", help="dataset name (default: output file stem)")
    p.add_argument("--out", required=True, help="output dataset file")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score a dataset with reference-free metrics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--metric", action="append", help="metric name or module:factory (repeatable)")
    p.add_argument("--question-types", action="store_true", help="add the rule-based question-type distribution")
    p.add_argument("--ontology", help="question-type ontology JSON (default: bundled)")
    p.add_argument("--out", help="report file (default: stdout)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="dialog count and mean turns of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("judge-prompts", help=f"write pairwise LLM-judge prompts (endpoint: ${JUDGE_ENDPOINT_ENV})")
    p.add_argument("--dataset-a", required=True)
    p.add_argument("--dataset-b", required=True)
    p.add_argument("--out", required=True, help="directory for one prompt file per comparison")
    p.add_argument("--send", action="store_true", help="also send each prompt to the judge endpoint")
    p.set_defaults(func=cmd_judge_prompts)

    p = sub.add_parser("retrieval-eval", help="train a retriever on generated questions and score a benchmark")
    p.add_argument("--passages", required=True, help="passage corpus the dataset was generated from")
    p.add_argument("--adapter")
    p.add_argument("--dataset", help="generated dataset to build query-passage pairs from")
    p.add_argument("--pairs", help="existing pairs file (JSONL: query_id, query, passage_id)")
    p.add_argument("--write-pairs", help="also write the pairs to this file")
    p.add_argument("--cap", type=int, help="use at most this many questions")
    p.add_argument("--benchmark", required=True, help="BEIR-layout benchmark directory")
    p.add_argument("--split", default="test")
    p.add_argument("--retriever", default="tfidf", help="retriever plug-in")
    p.add_argument("--ranking", help="static ranking JSON (query id -> ranked ids) instead of a retriever")
    p.add_argument("--k", type=int, action="append", help="metric cutoff (repeatable, default 10)")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_retrieval_eval)

    p = sub.add_parser("ablate", help="task x re-ranking ablation grid")
    p.add_argument("--grid", required=True, help="grid JSON config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"convqa: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - exit-code contract
        log.debug("command failed", exc_info=True)
        print(f"convqa: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
