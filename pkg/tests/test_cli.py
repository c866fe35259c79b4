import json
import subprocess
import sys

import pytest

from convqa.cli import main
from convqa.dialog import read_dataset
from convqa.experiments import TASK_COMBOS

from conftest import FIXTURES

PASSAGES = str(FIXTURES / "passages.jsonl")


def test_missing_config_exit_2(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    assert "not found" in capsys.readouterr().err


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["generate"])
    assert exc.value.code == 2


def test_runtime_failure_exit_1(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert main(["stats", "--dataset", str(bad)]) == 1


def test_train_writes_checkpoint_and_manifest(tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--config", str(FIXTURES / "train.json"), "--out", str(out),
                 "--lambda-qam", "0.3", "--lambda-tdg", "0", "--max-steps", "3"]) == 0
    assert (out / "checkpoint" / "manifest.json").is_file()
    assert (out / "checkpoint" / "backend").is_dir()
    rows = (out / "metrics.jsonl").read_text().splitlines()
    assert len(rows) == 3
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["config"]["training"]["lambda_qam"] == 0.3
    assert manifest["config"]["training"]["lambda_tdg"] == 0.0
    assert manifest["config"]["tasks"] == ["DR", "QAM"]
    assert {c["name"] for c in manifest["corpora"]} == {"DailyDialog", "QReCC"}
    assert all(c["fingerprint"] for c in manifest["corpora"])
    assert manifest["started"] and manifest["finished"] and manifest["code_version"]


def _generate(out, *extra):
    return main(["generate", "--passages", PASSAGES, "--out", str(out), *extra])


def test_generate_defaults_and_rerun_identical(tmp_path):
    a, b = tmp_path / "a" / "ds.jsonl", tmp_path / "b" / "ds.jsonl"
    a.parent.mkdir()
    b.parent.mkdir()
    assert _generate(a, "--retain-candidates") == 0
    assert _generate(b, "--retain-candidates") == 0
    assert a.read_bytes() == b.read_bytes()
    assert (a.parent / "ds.jsonl.candidates.jsonl").read_bytes() == (b.parent / "ds.jsonl.candidates.jsonl").read_bytes()
    manifest = json.loads((a.parent / "ds.jsonl.run_manifest.json").read_text())
    assert manifest["config"]["beam_size"] == 5 and manifest["config"]["rerank"] is True
    assert len(read_dataset(a)) == 20


def test_greedy_flags_match(tmp_path):
    g1, g5 = tmp_path / "g1.jsonl", tmp_path / "g5.jsonl"
    assert _generate(g1, "--no-rerank", "--beam-size", "1", "--name", "g") == 0
    assert _generate(g5, "--no-rerank", "--beam-size", "5", "--name", "g") == 0
    assert read_dataset(g1).dialogs == read_dataset(g5).dialogs


def test_generate_from_checkpoint_then_evaluate_and_stats(tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--config", str(FIXTURES / "train.json"), "--out", str(run), "--max-steps", "2"]) == 0
    ds = tmp_path / "ds.jsonl"
    assert _generate(ds, "--checkpoint", str(run / "checkpoint")) == 0
    report = tmp_path / "report.json"
    assert main(["evaluate", "--dataset", str(ds), "--metric", "lexical-overlap", "--metric", "constant",
                 "--question-types", "--out", str(report)]) == 0
    data = json.loads(report.read_text())
    assert data["means"]["constant"] == 1.0
    assert abs(sum(data["question_types"]["fractions"].values()) - 1) < 1e-9
    stats = tmp_path / "stats.json"
    assert main(["stats", "--dataset", str(ds), "--out", str(stats)]) == 0
    assert json.loads(stats.read_text())["num_dialogs"] == 20


def test_judge_prompts(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    _generate(a, "--no-rerank")
    _generate(b)
    out = tmp_path / "prompts"
    assert main(["judge-prompts", "--dataset-a", str(a), "--dataset-b", str(b), "--out", str(out)]) == 0
    files = sorted(out.glob("*.txt"))
    assert files and "options: [Question A, Equal, Question B]" in files[0].read_text()


def test_retrieval_eval_static_ranking(tmp_path):
    bench = tmp_path / "bench"
    (bench / "qrels").mkdir(parents=True)
    (bench / "corpus.jsonl").write_text('{"_id": "a", "text": "x"}\n{"_id": "b", "text": "y"}\n')
    (bench / "queries.jsonl").write_text('{"_id": "1", "text": "q"}\n')
    (bench / "qrels" / "test.tsv").write_text("query-id\tcorpus-id\tscore\n1\tb\t1\n")
    ranking = tmp_path / "ranking.json"
    ranking.write_text(json.dumps({"1": ["b", "a"]}))
    ds = tmp_path / "ds.jsonl"
    _generate(ds)
    out = tmp_path / "table.json"
    assert main(["retrieval-eval", "--passages", PASSAGES, "--dataset", str(ds), "--cap", "10",
                 "--benchmark", str(bench), "--ranking", str(ranking), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["mean"] == {"ndcg@10": 1.0, "map@10": 1.0, "recall@10": 1.0}


def _grid(tmp_path, **changes):
    grid = json.loads((FIXTURES / "grid.json").read_text())
    grid.update(changes)
    grid["registry"] = str(FIXTURES / "registry.json")
    grid["passages"] = PASSAGES
    path = tmp_path / "grid.json"
    path.write_text(json.dumps(grid))
    return path


def test_ablate_constant_metric_cells_equal(tmp_path):
    grid = _grid(tmp_path, metrics=[{"name": "constant", "options": {"value": 0.25}}],
                 training={"learning_rate": 0.01, "batch_size": 8, "grad_accum_steps": 1, "max_steps": 2})
    assert main(["ablate", "--grid", str(grid), "--out", str(tmp_path / "abl")]) == 0
    table = json.loads((tmp_path / "abl" / "ablation.json").read_text())
    assert len(table) == 8
    assert {row["constant"] for row in table} == {0.25}


def test_ablate_manifests_list_tasks(tmp_path):
    grid = _grid(tmp_path, training={"learning_rate": 0.01, "batch_size": 8, "grad_accum_steps": 1, "max_steps": 2})
    out = tmp_path / "abl"
    assert main(["ablate", "--grid", str(grid), "--out", str(out)]) == 0
    for combo in TASK_COMBOS:
        for cell in ("rerank", "no_rerank"):
            m = json.loads((out / combo.replace("+", "_") / cell / "run_manifest.json").read_text())
            assert m["config"]["tasks"] == combo.split("+")
            assert m["config"]["rerank"] is (cell == "rerank")


def test_missing_grid_exit_2(tmp_path):
    assert main(["ablate", "--grid", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "convqa.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("train", "generate", "evaluate", "stats", "retrieval-eval", "ablate"):
        assert cmd in proc.stdout


def test_commands_leave_inputs_untouched(tmp_path):
    import hashlib

    def digest():
        return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(FIXTURES.iterdir())}

    before = digest()
    main(["train", "--config", str(FIXTURES / "train.json"), "--out", str(tmp_path / "run"), "--max-steps", "1"])
    _generate(tmp_path / "ds.jsonl")
    assert digest() == before
