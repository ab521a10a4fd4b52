from __future__ import annotations

import numpy as np
import pytest

from patsim.corpus import Corpus, NoteRecord, PatientRecord, parse_timestamp


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def unit_rows(rng, n: int, d: int) -> np.ndarray:
    """Random matrix with unit L2 rows."""
    m = rng.standard_normal((n, d))
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return np.ascontiguousarray(m / norms)


def make_note(pid: str, ts: str, text: str) -> NoteRecord:
    return NoteRecord(pid, parse_timestamp(ts), text)


def make_corpus(spec: dict[str, list[tuple[str, str]]]) -> Corpus:
    """Corpus from {patient_id: [(timestamp, text), ...]}."""
    patients = {
        pid: PatientRecord.build(pid, [make_note(pid, ts, text) for ts, text in notes])
        for pid, notes in spec.items()
    }
    return Corpus.from_patients(patients)
