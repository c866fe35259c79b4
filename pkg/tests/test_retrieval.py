import itertools
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from convqa.dialog import ConvQADataset
from convqa.retrieval import (
    Benchmark,
    RandomRetriever,
    RankedRetrieval,
    TfidfRetriever,
    UndefinedMetric,
    aggregate_metrics,
    build_pairs,
    load_beir_benchmark,
    map_at_k,
    ndcg_at_k,
    read_pairs,
    recall_at_k,
    run_zeroshot_eval,
    write_pairs,
)

from conftest import make_dialog, make_qa_dialog


# -- independent oracle: textbook binary-relevance formulas, 1-based ranks ---------


def oracle(ranking, relevant, k):
    rels = [1 if doc in relevant else 0 for doc in ranking[:k]]
    dcg = sum(rel / math.log2(rank + 1) for rank, rel in enumerate(rels, start=1))
    ideal_rels = sorted([1] * len(relevant) + [0] * k, reverse=True)[:k]
    idcg = sum(rel / math.log2(rank + 1) for rank, rel in enumerate(ideal_rels, start=1))
    precisions = [sum(rels[:rank]) / rank for rank in range(1, len(rels) + 1) if rels[rank - 1]]
    ap = sum(precisions) / len(relevant)
    recall = sum(rels) / len(relevant)
    return dcg / idcg, ap, recall


def test_hand_example():
    r = RankedRetrieval("q", ("irr", "rel"), {"rel"})
    assert ndcg_at_k(r, 2) == pytest.approx(1 / math.log2(3), abs=1e-12)
    assert ndcg_at_k(r, 2) == pytest.approx(0.6309, abs=1e-4)
    assert map_at_k(r, 2) == 0.5
    assert recall_at_k(r, 2) == 1.0


def test_perfect_ranking():
    r = RankedRetrieval("q", ("a", "b", "c", "d"), {"a", "b"})
    for k in (2, 3, 10):
        assert (ndcg_at_k(r, k), map_at_k(r, k), recall_at_k(r, k)) == (1.0, 1.0, 1.0)


def test_exhaustive_oracle_equivalence():
    docs = ["d0", "d1", "d2", "d3", "d4"]
    checked = 0
    for m in range(1, 6):
        for ranking in itertools.permutations(docs, m):
            for n_rel in range(1, 4):
                for relevant in itertools.combinations(docs, n_rel):
                    r = RankedRetrieval("q", ranking, relevant)
                    for k in range(1, 7):
                        want = oracle(list(ranking), set(relevant), k)
                        got = (ndcg_at_k(r, k), map_at_k(r, k), recall_at_k(r, k))
                        assert all(abs(g - w) <= 1e-12 for g, w in zip(got, want)), (ranking, relevant, k)
                        checked += 1
    assert checked == 325 * 25 * 6


def test_reversed_ground_truth_matches_oracle():
    ranking = [f"d{i}" for i in range(10)][::-1]
    relevant = {"d0", "d1", "d2"}
    r = RankedRetrieval("q", ranking, relevant)
    for k in (1, 5, 10):
        got = (ndcg_at_k(r, k), map_at_k(r, k), recall_at_k(r, k))
        assert got == pytest.approx(oracle(ranking, relevant, k), abs=1e-12)


def test_undefined_and_aggregation():
    with pytest.raises(UndefinedMetric):
        ndcg_at_k(RankedRetrieval("q", ("a",), set()), 1)
    means, excluded = aggregate_metrics([RankedRetrieval("q1", ("a", "b"), {"b"}),
                                         RankedRetrieval("q2", ("a",), set())], ks=(2,))
    assert excluded == 1 and means["map@2"] == 0.5
    with pytest.raises(ValueError):
        RankedRetrieval("q", ("a", "a"), {"a"})


_perm = st.permutations([f"d{i}" for i in range(7)])


@given(_perm, st.sets(st.sampled_from([f"d{i}" for i in range(7)]), min_size=1, max_size=3), st.integers(1, 8))
def test_bounds_relabeling_and_monotonicity(ranking, relevant, k):
    r = RankedRetrieval("q", ranking, relevant)
    vals = [ndcg_at_k(r, k), map_at_k(r, k), recall_at_k(r, k)]
    assert all(0 <= v <= 1 for v in vals)
    rename = {d: f"x{d}" for d in ranking}
    r2 = RankedRetrieval("q", [rename[d] for d in ranking], {rename[d] for d in relevant})
    assert [ndcg_at_k(r2, k), map_at_k(r2, k), recall_at_k(r2, k)] == vals
    for i in range(1, len(ranking)):
        if ranking[i] in relevant and ranking[i - 1] not in relevant:
            moved = list(ranking)
            moved[i - 1], moved[i] = moved[i], moved[i - 1]
            r3 = RankedRetrieval("q", moved, relevant)
            new = [ndcg_at_k(r3, k), map_at_k(r3, k), recall_at_k(r3, k)]
            assert all(n >= v - 1e-15 for n, v in zip(new, vals))


def test_build_pairs_counts(tmp_path):
    d = make_qa_dialog(3, "one")
    d = type(d)(d.id, d.utterances, "T", "p1")
    ds = ConvQADataset.from_dialogs("x", [d])
    pairs = build_pairs(ds, {"p1": "passage text"})
    assert len(pairs) == 3 and {p.passage_id for p in pairs} == {"p1"}
    write_pairs(pairs, tmp_path / "pairs.jsonl")
    assert read_pairs(tmp_path / "pairs.jsonl", {"p1": "passage text"}) == pairs
    with pytest.raises(KeyError, match="one"):
        build_pairs(ds, {})


def test_build_pairs_cap():
    dialogs = []
    for i in range(5):
        base = make_qa_dialog(5, f"d{i}")
        dialogs.append(type(base)(base.id, base.utterances, None, f"p{i}"))
    ds = ConvQADataset.from_dialogs("x", dialogs)
    corpus = {f"p{i}": "t" for i in range(5)}
    assert len(build_pairs(ds, corpus)) == 25
    capped = build_pairs(ds, corpus, cap=10)
    assert [p.query_id for p in capped] == [p.query_id for p in build_pairs(ds, corpus)[:10]]


def _fifty_doc_benchmark(n_queries=1):
    corpus = {f"doc{i:02d}": f"text {i}" for i in range(50)}
    queries = {f"q{j}": f"query {j}" for j in range(n_queries)}
    qrels = {f"q{j}": frozenset({f"doc{j:02d}"}) for j in range(n_queries)}
    return Benchmark("fifty", corpus, queries, qrels)


def test_static_ground_truth_ranking():
    bench = _fifty_doc_benchmark(5)
    ranking = {q: sorted(rel) + [d for d in bench.corpus if d not in rel] for q, rel in bench.qrels.items()}
    table = run_zeroshot_eval([], None, bench, ks=(10,), static_ranking=ranking)
    assert table.mean == {"ndcg@10": 1.0, "map@10": 1.0, "recall@10": 1.0}
    with pytest.raises(ValueError):
        run_zeroshot_eval([], None, bench)


def test_random_retriever_recall_matches_chance():
    table = run_zeroshot_eval([], RandomRetriever(), _fifty_doc_benchmark(), ks=(10,), seeds=range(1000))
    sigma = math.sqrt(0.2 * 0.8 / 1000)
    assert len(table.rows) == 1000
    assert abs(table.mean["recall@10"] - 0.2) <= 3 * sigma
    assert table.std["recall@10"] > 0


def test_tfidf_retriever_and_beir_loader(tmp_path):
    (tmp_path / "qrels").mkdir()
    (tmp_path / "corpus.jsonl").write_text(
        '{"_id": "a", "title": "Shrub", "text": "grevillea shrub flowers"}\n'
        '{"_id": "b", "title": "River", "text": "danube river europe"}\n')
    (tmp_path / "queries.jsonl").write_text('{"_id": "1", "text": "which river flows in europe"}\n')
    (tmp_path / "qrels" / "test.tsv").write_text("query-id\tcorpus-id\tscore\n1\tb\t1\n")
    bench = load_beir_benchmark(tmp_path)
    pairs = build_pairs(
        ConvQADataset.from_dialogs("x", [make_dialog(["Where is the river?", "Europe."], "d", source_passage_id="b")]),
        bench.corpus)
    table = run_zeroshot_eval(pairs, TfidfRetriever(), bench, ks=(1,))
    assert table.mean["recall@1"] == 1.0
