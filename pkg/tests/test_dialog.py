import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convqa.dialog import (
    Candidate,
    CandidateSet,
    ConvQADataset,
    DatasetFormatError,
    Dialog,
    DialogMeta,
    Origin,
    Passage,
    Role,
    Utterance,
    mask_utterance,
    normalize_text,
    read_dataset,
    sidecar_path,
    validate_dialog,
    write_dataset,
)
from convqa.render import render_turns

from conftest import make_dialog


def test_minimal_dialog_is_valid():
    assert validate_dialog(make_dialog(["q?", "a."])) == []


def test_repeated_role_reports_index():
    d = Dialog("x", (Utterance("q1?", Role.USER), Utterance("q2?", Role.USER)))
    problems = validate_dialog(d)
    assert len(problems) == 1
    assert "alternation" in problems[0] and "utterance 1" in problems[0]


def test_appendix_sample_dialog_is_valid(grevillea):
    assert len(grevillea) == 12
    assert validate_dialog(grevillea) == []


def test_validate_flags_short_and_unnormalized():
    assert any("length" in p for p in validate_dialog(make_dialog(["only one"])))
    assert any("normalized" in p for p in validate_dialog(make_dialog([" q? ", "a."])))
    assert any("empty" in p for p in validate_dialog(make_dialog(["", "a."])))


def test_validate_source_sentence_must_be_agent():
    d = Dialog("x", (Utterance("s", Role.USER, Origin.SOURCE_SENTENCE), Utterance("a", Role.AGENT)))
    assert any("origin" in p for p in validate_dialog(d))


@given(st.lists(st.one_of(st.none(), st.integers(), st.text(), st.builds(object)), max_size=5))
def test_validate_is_total(junk):
    class Fake:
        utterances = junk

    assert isinstance(validate_dialog(Fake()), list)
    assert isinstance(validate_dialog(object()), list)


def test_mask_first_and_interior_slots():
    d = make_dialog(["q1", "a1", "q2", "a2"])
    assert mask_utterance(d, 0, "<m>").texts() == ["<m>", "a1", "q2", "a2"]
    masked = mask_utterance(d, 2, "<m>")
    assert masked.texts() == ["q1", "a1", "<m>", "a2"]
    assert masked.render() == "User: q1 Agent: a1 User: <m> Agent: a2"
    assert d.utterances[2].text == "q2"


def test_mask_two_turn_render():
    assert mask_utterance(make_dialog(["q1", "a1"]), 0, "<m>").render() == "User: <m> Agent: a1"


def test_mask_out_of_range_names_index_and_length():
    with pytest.raises(IndexError, match=r"5.*T=2"):
        mask_utterance(make_dialog(["q", "a"]), 5, "<m>")


@given(st.lists(st.text(alphabet="abc xyz?.", min_size=1, max_size=12), min_size=2, max_size=8), st.data())
def test_mask_then_fill_is_identity(texts, data):
    d = make_dialog(texts)
    t = data.draw(st.integers(0, len(texts) - 1))
    masked = mask_utterance(d, t, "<extra_id_0>")
    assert masked.fill(d.utterances[t].text) == d
    assert masked.render().count("<extra_id_0>") == 1


def test_passage_consistency():
    p = Passage("p", "T", ("A b.", "C d."), "A  b.\n C d. ")
    assert p.is_consistent()
    assert p.text == normalize_text(p.raw_text)


def test_candidate_set_rejects_unordered_scores():
    with pytest.raises(ValueError):
        CandidateSet((Candidate("a", 0.1), Candidate("b", 0.5)))
    with pytest.raises(ValueError):
        CandidateSet(())


def _two_dialog_dataset() -> ConvQADataset:
    d1 = make_dialog(["Where is it?", "It is here."], "one", title="One")
    d2 = make_dialog(["Why?", "Because.", "Is that all?", "Yes, ünïcode ✓ too."], "two", source_passage_id="p2")
    cs = CandidateSet((Candidate("Why?", -0.5, 0.25), Candidate("How?", -1.0, None)), selected=0)
    meta = {
        "one": DialogMeta(title="One", prompt_text="Hello, I want to learn about One.", keywords=(("here",),)),
        "two": DialogMeta(keywords=(("because",), ()), candidates=(cs, cs)),
    }
    return ConvQADataset("fixture", (d1, d2), meta)


def test_empty_dataset_roundtrip(tmp_path):
    path = tmp_path / "empty.jsonl"
    write_dataset(ConvQADataset("empty", ()), path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["type"] == "header"
    assert read_dataset(path) == ConvQADataset("empty", ())


def test_two_dialog_roundtrip_and_byte_stability(tmp_path):
    ds = _two_dialog_dataset()
    p1 = tmp_path / "a.jsonl"
    write_dataset(ds, p1)
    first = p1.read_bytes()
    back = read_dataset(p1)
    assert back == ds
    write_dataset(back, p1)
    assert p1.read_bytes() == first
    assert sidecar_path(p1).exists()
    assert all(line == line.rstrip() for line in p1.read_text(encoding="utf-8").splitlines())


def test_duplicate_id_read_error(tmp_path):
    path = tmp_path / "dup.jsonl"
    rec = {"id": "same", "utterances": [{"role": "USER", "text": "q?"}, {"role": "AGENT", "text": "a."}]}
    path.write_text("\n".join([json.dumps({"type": "header", "name": "dup"}), json.dumps(rec), json.dumps(rec)]))
    with pytest.raises(DatasetFormatError, match="same"):
        read_dataset(path)


def test_parse_error_names_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps({"type": "header", "name": "x"}) + "\n{not json\n")
    with pytest.raises(DatasetFormatError, match="line 2"):
        read_dataset(path)


def test_invalid_dialog_read_error_names_id(tmp_path):
    path = tmp_path / "bad.jsonl"
    rec = {"id": "broken", "utterances": [{"role": "USER", "text": "q?"}, {"role": "USER", "text": "q2?"}]}
    path.write_text(json.dumps({"type": "header", "name": "x"}) + "\n" + json.dumps(rec) + "\n")
    with pytest.raises(DatasetFormatError, match="broken"):
        read_dataset(path)


def test_write_refuses_invalid_dataset(tmp_path):
    bad = ConvQADataset("x", (make_dialog(["q"], "short"),), {"short": DialogMeta()})
    with pytest.raises(DatasetFormatError, match="short"):
        write_dataset(bad, tmp_path / "x.jsonl")
    orphan = ConvQADataset("x", (make_dialog(["q", "a"], "a"),), {"a": DialogMeta(), "ghost": DialogMeta()})
    assert any("ghost" in v for v in orphan.violations())


_text = st.text(alphabet=st.characters(blacklist_categories=("Cs", "Zs", "Cc")), min_size=1, max_size=10)


@st.composite
def datasets(draw):
    n = draw(st.integers(0, 4))
    dialogs, meta = [], {}
    for i in range(n):
        texts = draw(st.lists(_text, min_size=2, max_size=6))
        d = make_dialog(texts, f"d{i}", title=draw(st.one_of(st.none(), _text)))
        dialogs.append(d)
        n_q = len(texts) // 2
        kws = tuple(tuple(draw(st.lists(_text, max_size=2))) for _ in range(n_q))
        cands = ()
        if draw(st.booleans()) and n_q:
            scores = sorted(draw(st.lists(st.floats(-10, 0), min_size=1, max_size=3)), reverse=True)
            cs = CandidateSet(tuple(Candidate(f"c{j}", s, draw(st.one_of(st.none(), st.floats(0, 1))))
                                    for j, s in enumerate(scores)), selected=0)
            cands = (cs,) * n_q
        meta[d.id] = DialogMeta(title=d.title, prompt_text=draw(st.one_of(st.none(), _text)),
                                keywords=kws, candidates=cands)
    return ConvQADataset(draw(_text), tuple(dialogs), meta)


@settings(max_examples=60, deadline=None)
@given(datasets())
def test_roundtrip_property(tmp_path_factory, ds):
    path = tmp_path_factory.mktemp("rt") / "ds.jsonl"
    write_dataset(ds, path)
    assert read_dataset(path) == ds


def test_render_turns_prompt_is_bare_prefix():
    assert render_turns([(Role.USER, "q"), (Role.AGENT, "a")], prompt_text="Hi.") == "Hi. User: q Agent: a"
