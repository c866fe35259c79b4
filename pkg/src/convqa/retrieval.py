"""Query-passage pairs from generated dialogs and zero-shot retrieval evaluation.

Relevance is binary. For a ranked list ``r`` of document ids, relevant set
``R`` and cutoff ``k``:

* NDCG@k   = sum over relevant hits at 1-based rank i <= k of 1/log2(i+1),
  divided by the same sum for an ideal ranking of min(k, |R|) hits;
* AP@k     = sum over relevant hits at rank i <= k of precision@i, divided
  by |R| (the trec_eval ``map_cut`` convention);
* Recall@k = |R among the top k| / |R|.

All three are undefined when ``R`` is empty; such queries are excluded from
means and counted.
"""

from __future__ import annotations

import json
import math
import random
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Protocol, Sequence, Union

from . import plugins
from .dialog import ConvQADataset, Passage
from .evaluation import question_turns


class UndefinedMetric(ValueError):
    pass


@dataclass(frozen=True)
class QueryPassagePair:
    query_id: str
    query: str
    passage_id: str
    passage_text: str


@dataclass(frozen=True)
class RankedRetrieval:
    query_id: str
    ranked_passage_ids: tuple[str, ...]
    relevant_ids: frozenset[str]

    def __post_init__(self) -> None:
        if not isinstance(self.ranked_passage_ids, tuple):
            object.__setattr__(self, "ranked_passage_ids", tuple(self.ranked_passage_ids))
        if not isinstance(self.relevant_ids, frozenset):
            object.__setattr__(self, "relevant_ids", frozenset(self.relevant_ids))
        if len(set(self.ranked_passage_ids)) != len(self.ranked_passage_ids):
            raise ValueError(f"ranking for query {self.query_id!r} contains duplicates")


def build_pairs(ds: ConvQADataset, corpus: Mapping[str, Union[Passage, str]],
                cap: Optional[int] = None) -> list[QueryPassagePair]:
    """One pair per question turn, in dataset order, truncated to ``cap``."""
    pairs: list[QueryPassagePair] = []
    for d in ds.dialogs:
        pid = d.source_passage_id
        if pid is None or pid not in corpus:
            raise KeyError(f"dialog {d.id!r} refers to unknown passage {pid!r}")
        entry = corpus[pid]
        text = entry.text if isinstance(entry, Passage) else str(entry)
        for qt in question_turns(d):
            if cap is not None and len(pairs) >= cap:
                return pairs
            pairs.append(QueryPassagePair(f"{d.id}.{qt.turn_index}", qt.question, pid, text))
    return pairs


def write_pairs(pairs: Sequence[QueryPassagePair], path: Union[str, Path]) -> None:
    lines = [json.dumps({"query_id": p.query_id, "query": p.query, "passage_id": p.passage_id},
                        ensure_ascii=False) for p in pairs]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_pairs(path: Union[str, Path], corpus: Mapping[str, Union[Passage, str]]) -> list[QueryPassagePair]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            entry = corpus[rec["passage_id"]]
            text = entry.text if isinstance(entry, Passage) else str(entry)
            out.append(QueryPassagePair(rec["query_id"], rec["query"], rec["passage_id"], text))
    return out


# -- metrics --------------------------------------------------------------------


def _check(r: RankedRetrieval, k: int) -> None:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not r.relevant_ids:
        raise UndefinedMetric(f"query {r.query_id!r} has no relevant documents")


def ndcg_at_k(r: RankedRetrieval, k: int) -> float:
    _check(r, k)
    dcg = sum(1.0 / math.log2(i + 2) for i, doc in enumerate(r.ranked_passage_ids[:k]) if doc in r.relevant_ids)
    ideal = sum(1.0 / math.log2(i + 2) for i in range(min(k, len(r.relevant_ids))))
    return dcg / ideal


def map_at_k(r: RankedRetrieval, k: int) -> float:
    _check(r, k)
    hits = 0
    total = 0.0
    for i, doc in enumerate(r.ranked_passage_ids[:k]):
        if doc in r.relevant_ids:
            hits += 1
            total += hits / (i + 1)
    return total / len(r.relevant_ids)


def recall_at_k(r: RankedRetrieval, k: int) -> float:
    _check(r, k)
    found = sum(1 for doc in r.ranked_passage_ids[:k] if doc in r.relevant_ids)
    return found / len(r.relevant_ids)


METRIC_FUNCTIONS = {"ndcg": ndcg_at_k, "map": map_at_k, "recall": recall_at_k}


def aggregate_metrics(retrievals: Iterable[RankedRetrieval], ks: Sequence[int] = (10,)) -> tuple[dict[str, float], int]:
    """Mean of every metric@k over queries, plus the number of excluded queries."""
    sums = {f"{m}@{k}": 0.0 for m in METRIC_FUNCTIONS for k in ks}
    used = excluded = 0
    for r in retrievals:
        if not r.relevant_ids:
            excluded += 1
            continue
        used += 1
        for m, fn in METRIC_FUNCTIONS.items():
            for k in ks:
                sums[f"{m}@{k}"] += fn(r, k)
    if not used:
        raise UndefinedMetric("no query has a relevant document")
    return {key: value / used for key, value in sums.items()}, excluded


# -- benchmarks and retrievers --------------------------------------------------


@dataclass(frozen=True)
class Benchmark:
    name: str
    corpus: dict[str, str]
    queries: dict[str, str]
    qrels: dict[str, frozenset[str]]


def load_beir_benchmark(path: Union[str, Path], split: str = "test") -> Benchmark:
    """Read a BEIR-layout directory: corpus.jsonl, queries.jsonl, qrels/<split>.tsv."""
    path = Path(path)
    corpus = {}
    for line in (path / "corpus.jsonl").read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            corpus[str(rec["_id"])] = " ".join(x for x in (rec.get("title", ""), rec.get("text", "")) if x)
    queries = {}
    for line in (path / "queries.jsonl").read_text(encoding="utf-8").splitlines():
        if line.strip():
            rec = json.loads(line)
            queries[str(rec["_id"])] = rec["text"]
    qrels: dict[str, set[str]] = {}
    rows = (path / "qrels" / f"{split}.tsv").read_text(encoding="utf-8").splitlines()
    for row in rows:
        parts = row.split("\t")
        if len(parts) < 3 or parts[0] == "query-id":
            continue
        if float(parts[2]) > 0:
            qrels.setdefault(parts[0], set()).add(parts[1])
    return Benchmark(path.name, corpus, {q: t for q, t in queries.items() if q in qrels},
                     {q: frozenset(v) for q, v in qrels.items()})


class Retriever(Protocol):
    name: str

    def fit(self, pairs: Sequence[QueryPassagePair], seed: int) -> None: ...

    def index(self, corpus: Mapping[str, str]) -> None: ...

    def search(self, query: str, top_k: int) -> list[str]: ...


class RandomRetriever:
    """Uniformly shuffled corpus per query; the chance-level reference."""

    name = "random"

    def __init__(self) -> None:
        self._ids: list[str] = []
        self._rng = random.Random(0)

    def fit(self, pairs: Sequence[QueryPassagePair], seed: int) -> None:
        self._rng = random.Random(seed)

    def index(self, corpus: Mapping[str, str]) -> None:
        self._ids = sorted(corpus)

    def search(self, query: str, top_k: int) -> list[str]:
        ids = list(self._ids)
        self._rng.shuffle(ids)
        return ids[:top_k]


class TfidfRetriever:
    """Cosine similarity over TF-IDF vectors whose vocabulary is fit on the pairs."""

    name = "tfidf"

    def __init__(self) -> None:
        from sklearn.feature_extraction.text import TfidfVectorizer

        self._vectorizer = TfidfVectorizer(sublinear_tf=True)
        self._ids: list[str] = []
        self._matrix = None

    def fit(self, pairs: Sequence[QueryPassagePair], seed: int) -> None:
        texts = [p.query for p in pairs] + sorted({p.passage_text for p in pairs})
        self._vectorizer.fit(texts)

    def index(self, corpus: Mapping[str, str]) -> None:
        self._ids = sorted(corpus)
        self._matrix = self._vectorizer.transform([corpus[i] for i in self._ids])

    def search(self, query: str, top_k: int) -> list[str]:
        scores = (self._matrix @ self._vectorizer.transform([query]).T).toarray().ravel()
        order = sorted(range(len(self._ids)), key=lambda i: (-scores[i], self._ids[i]))
        return [self._ids[i] for i in order[:top_k]]


@dataclass
class DualEncoderConfig:
    model_name: str = "sentence-transformers/all-MiniLM-L6-v2"
    batch_size: int = 32
    learning_rate: float = 1e-4
    warmup_steps: int = 0
    epochs: int = 10


class SentenceTransformerRetriever:
    """Dual encoder trained on (query, passage) pairs with in-batch negatives.

    Needs ``sentence-transformers`` and access to the base model weights.
    """

    name = "sentence-transformer"

    def __init__(self, config: Optional[DualEncoderConfig] = None):
        self.config = config or DualEncoderConfig()
        self._model = None
        self._ids: list[str] = []
        self._emb = None

    def fit(self, pairs: Sequence[QueryPassagePair], seed: int) -> None:
        import torch
        from sentence_transformers import InputExample, SentenceTransformer, losses
        from torch.utils.data import DataLoader

        torch.manual_seed(seed)
        random.seed(seed)
        self._model = SentenceTransformer(self.config.model_name)
        examples = [InputExample(texts=[p.query, p.passage_text]) for p in pairs]
        loader = DataLoader(examples, shuffle=True, batch_size=self.config.batch_size)
        loss = losses.MultipleNegativesRankingLoss(self._model)
        self._model.fit(
            train_objectives=[(loader, loss)],
            epochs=self.config.epochs,
            warmup_steps=self.config.warmup_steps,
            optimizer_params={"lr": self.config.learning_rate},
            show_progress_bar=False,
        )

    def index(self, corpus: Mapping[str, str]) -> None:
        self._ids = sorted(corpus)
        self._emb = self._model.encode([corpus[i] for i in self._ids], convert_to_tensor=True,
                                       normalize_embeddings=True)

    def search(self, query: str, top_k: int) -> list[str]:
        q = self._model.encode([query], convert_to_tensor=True, normalize_embeddings=True)
        scores = (self._emb @ q.T).squeeze(1).tolist()
        order = sorted(range(len(self._ids)), key=lambda i: (-scores[i], self._ids[i]))
        return [self._ids[i] for i in order[:top_k]]


RETRIEVERS = {"random": RandomRetriever, "tfidf": TfidfRetriever,
              "sentence-transformer": SentenceTransformerRetriever}


def get_retriever(name: str, **kwargs: Any) -> Retriever:
    return plugins.create(name, RETRIEVERS, "retriever", **kwargs)


@dataclass
class RetrievalTable:
    benchmark: str
    ks: tuple[int, ...]
    rows: list[dict[str, Any]] = field(default_factory=list)
    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)
    excluded: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {"benchmark": self.benchmark, "ks": list(self.ks), "rows": self.rows,
                "mean": self.mean, "std": self.std, "excluded": self.excluded}


def read_ranking(path: Union[str, Path]) -> dict[str, list[str]]:
    return {str(k): list(v) for k, v in json.loads(Path(path).read_text(encoding="utf-8")).items()}


def evaluate_ranking(ranking: Mapping[str, Sequence[str]], benchmark: Benchmark,
                     ks: Sequence[int] = (10,)) -> tuple[dict[str, float], int]:
    retrievals = [
        RankedRetrieval(qid, tuple(ranking.get(qid, ())), benchmark.qrels.get(qid, frozenset()))
        for qid in sorted(benchmark.queries)
    ]
    return aggregate_metrics(retrievals, ks)


def run_zeroshot_eval(pairs: Sequence[QueryPassagePair], retriever: Optional[Retriever], benchmark: Benchmark,
                      ks: Sequence[int] = (10,), seeds: Sequence[int] = (0,),
                      static_ranking: Optional[Mapping[str, Sequence[str]]] = None) -> RetrievalTable:
    """Train on ``pairs`` once per seed and score the benchmark.

    Without a retriever, ``static_ranking`` (query id -> ranked ids) is
    scored instead and the table has a single row.
    """
    ks = tuple(ks)
    table = RetrievalTable(benchmark=benchmark.name, ks=ks)
    depth = max(ks)
    if retriever is None:
        if static_ranking is None:
            raise ValueError("no retriever available and no static ranking given")
        means, table.excluded = evaluate_ranking(static_ranking, benchmark, ks)
        table.rows.append(dict(means, seed=None))
    else:
        for seed in seeds:
            retriever.fit(pairs, seed)
            retriever.index(benchmark.corpus)
            ranking = {qid: retriever.search(benchmark.queries[qid], depth) for qid in sorted(benchmark.queries)}
            means, table.excluded = evaluate_ranking(ranking, benchmark, ks)
            table.rows.append(dict(means, seed=seed))
    keys = [key for key in table.rows[0] if key != "seed"]
    for key in keys:
        values = [row[key] for row in table.rows]
        table.mean[key] = statistics.fmean(values)
        table.std[key] = statistics.stdev(values) if len(values) > 1 else 0.0
    return table
