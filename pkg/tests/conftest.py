from __future__ import annotations

import json
from pathlib import Path

import pytest

from convqa.corpus import CorpusDescriptor, CorpusKind, DialogCorpus, segment_passage
from convqa.dialog import Dialog, Origin, Role, Utterance

FIXTURES = Path(__file__).parent / "fixtures"

# USER/AGENT turns of the first WikiDialog2 sample dialog (Grevillea rudis).
GREVILLEA = [
    "Where is Grevillea rudis found?",
    'Grevillea rudis Grevillea rudis is a shrub of the genus "Grevillea" native to an area along the west '
    "coast in the Wheatbelt region of Western Australia.",
    "How tall is the shrub?",
    "The loose, spreading to erect shrub typically grows to a height of and has non-glaucous branchlets.",
    "How do the leaves of the shrub Grevillea rudis look like?",
    "It has simple flat, spathulate, irregularly lobed leaves with a blade that is long and wide.",
    "How often does the shrub Grevillea rudis bloom?",
    "It blooms sporadically throughout the year and produces a terminal raceme regular inflorescence with "
    "cream or yellow flowers and white or cream styles.",
    "What kind of fruit does the shrub Grevillea rudis produce?",
    "Later it forms obovoid or ellipsoidal glandular hairy fruit that is long.",
    "How does the shrub Grevillea rudis regenerate?",
    "It will regenerate from seed only.",
]


def make_dialog(texts, dialog_id="d0", first=Role.USER, origin=Origin.CORPUS, **kw) -> Dialog:
    role = first
    utts = []
    for text in texts:
        utts.append(Utterance(text, role, origin))
        role = role.other
    return Dialog(dialog_id, tuple(utts), **kw)


def make_qa_dialog(n_pairs: int, dialog_id: str = "qa") -> Dialog:
    texts = []
    for i in range(n_pairs):
        texts += [f"Question number {i} about topic{i}?", f"Answer {i} mentions topic{i} and detail{i}."]
    return make_dialog(texts, dialog_id)


@pytest.fixture
def grevillea() -> Dialog:
    return make_dialog(GREVILLEA, "grevillea-rudis", title="Grevillea rudis")


@pytest.fixture(scope="session")
def fixture_passages():
    out = []
    for line in (FIXTURES / "passages.jsonl").read_text(encoding="utf-8").splitlines():
        rec = json.loads(line)
        out.append(segment_passage(rec["text"], rec["title"], passage_id=rec["id"]))
    return out


def synthetic_corpora(n_dialogs: int = 10, n_pairs: int = 3, kind=CorpusKind.CONVQA_DIALOG) -> list[DialogCorpus]:
    import random

    rng = random.Random(1)
    words = "shrub leaf flower seed river city music planet engine bridge castle forest storm island metal glass".split()
    dialogs = []
    for i in range(n_dialogs):
        texts = []
        for _ in range(n_pairs):
            a, b, c = rng.sample(words, 3)
            texts += [f"What is the {a} near the {b}?", f"The {a} has a {b} and a {c}."]
        dialogs.append(make_dialog(texts, f"syn-{i}"))
    return [DialogCorpus(CorpusDescriptor("synthetic", kind, "-"), tuple(dialogs))]


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
