"""Turn text corpora into conversational QA dialog datasets by dialog inpainting."""

__version__ = "0.1.0"

from .dialog import (
    Candidate,
    CandidateSet,
    ConvQADataset,
    Dialog,
    DialogMeta,
    MaskedDialog,
    Origin,
    Passage,
    QAPair,
    Role,
    Utterance,
    mask_utterance,
    normalize_text,
    qa_pairs,
    read_dataset,
    validate_dialog,
    write_dataset,
)

__all__ = [
    "Candidate",
    "CandidateSet",
    "ConvQADataset",
    "Dialog",
    "DialogMeta",
    "MaskedDialog",
    "Origin",
    "Passage",
    "QAPair",
    "Role",
    "Utterance",
    "mask_utterance",
    "normalize_text",
    "qa_pairs",
    "read_dataset",
    "validate_dialog",
    "write_dataset",
]
