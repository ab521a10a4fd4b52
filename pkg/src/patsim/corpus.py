"""Patient/note data model and JSONL corpus I/O.

A corpus is a set of patients, each carrying a chronologically sorted
sequence of free-text notes. The on-disk format is JSONL: one object per
note with fields ``patient_id``, ``timestamp`` (ISO-8601, time part
optional) and ``text``.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Iterator

from .exceptions import EmptyCorpus, ParseError

__all__ = [
    "NoteRecord",
    "PatientRecord",
    "Corpus",
    "CorpusSummary",
    "CorpusStats",
    "parse_timestamp",
    "load_corpus",
    "write_corpus",
    "corpus_stats",
]


def parse_timestamp(value: str) -> datetime:
    """Parse an ISO-8601 timestamp; a missing time part means midnight.

    Timezone-aware inputs are converted to naive UTC so all timestamps in a
    corpus are mutually comparable.
    """
    if not isinstance(value, str) or not value.strip():
        raise ValueError(f"not a timestamp: {value!r}")
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is not None:
        dt = (dt - dt.utcoffset()).replace(tzinfo=None)
    return dt


@dataclass(frozen=True)
class NoteRecord:
    """One timestamped free-text note belonging to a patient."""

    patient_id: str
    timestamp: datetime
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("note text is empty")


@dataclass(frozen=True)
class PatientRecord:
    """A patient and their notes, sorted ascending by timestamp.

    Equal timestamps keep their input order (stable sort), so matrices
    built downstream are reproducible.
    """

    patient_id: str
    notes: tuple[NoteRecord, ...]

    @classmethod
    def build(cls, patient_id: str, notes: Iterable[NoteRecord]) -> "PatientRecord":
        ordered = tuple(sorted(notes, key=lambda n: n.timestamp))
        if not ordered:
            raise ValueError(f"patient {patient_id!r} has no notes")
        for n in ordered:
            if n.patient_id != patient_id:
                raise ValueError(
                    f"note patient_id {n.patient_id!r} != {patient_id!r}"
                )
        return cls(patient_id, ordered)


@dataclass(frozen=True)
class CorpusSummary:
    n_patients: int
    n_notes: int
    mean_notes: float


@dataclass(frozen=True)
class CorpusStats:
    n_patients: int
    n_notes: int
    mean_notes: float
    median_notes: float


@dataclass(frozen=True)
class Corpus:
    """Immutable map of patient_id to PatientRecord plus count summary."""

    patients: dict[str, PatientRecord]
    summary: CorpusSummary = field(compare=False, default=None)  # type: ignore[assignment]

    @classmethod
    def from_patients(cls, patients: dict[str, PatientRecord]) -> "Corpus":
        if not patients:
            raise EmptyCorpus("corpus has no patients")
        n_notes = sum(len(p.notes) for p in patients.values())
        summary = CorpusSummary(len(patients), n_notes, n_notes / len(patients))
        return cls(dict(patients), summary)

    def __iter__(self) -> Iterator[PatientRecord]:
        return iter(self.patients.values())

    def __len__(self) -> int:
        return len(self.patients)


def _iter_jsonl_files(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(path.glob("*.jsonl"))
        if not files:
            raise EmptyCorpus(f"no .jsonl files under {path}")
        return files
    return [path]


def _reject_duplicate_keys(pairs):
    seen = set()
    for key, _ in pairs:
        if key in seen:
            raise ValueError(f"duplicate field {key!r}")
        seen.add(key)
    return dict(pairs)


def load_corpus(path: str | Path) -> Corpus:
    """Load and validate a corpus from a JSONL file or directory of them.

    Notes are re-sorted chronologically per patient; ties keep file order.
    Raises ParseError (with file and line) on malformed records and
    EmptyCorpus when no notes are found.
    """
    path = Path(path)
    if not path.exists():
        raise ParseError("corpus path does not exist", path=path)
    notes: dict[str, list[NoteRecord]] = {}
    total = 0
    for file in _iter_jsonl_files(path):
        with open(file, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    obj = json.loads(raw, object_pairs_hook=_reject_duplicate_keys)
                except ValueError as exc:
                    raise ParseError(f"bad JSON: {exc}", path=file, line=lineno)
                if not isinstance(obj, dict):
                    raise ParseError("line is not an object", path=file, line=lineno)
                for fieldname in ("patient_id", "timestamp", "text"):
                    if fieldname not in obj:
                        raise ParseError(
                            f"missing field {fieldname!r}", path=file, line=lineno
                        )
                pid = obj["patient_id"]
                if not isinstance(pid, str) or not pid:
                    raise ParseError("patient_id must be a non-empty string",
                                     path=file, line=lineno)
                try:
                    ts = parse_timestamp(obj["timestamp"])
                except ValueError as exc:
                    raise ParseError(f"bad timestamp: {exc}", path=file, line=lineno)
                text = obj["text"]
                if not isinstance(text, str) or not text.strip():
                    raise ParseError("text must be a non-empty string",
                                     path=file, line=lineno)
                notes.setdefault(pid, []).append(NoteRecord(pid, ts, text))
                total += 1
    if total == 0:
        raise EmptyCorpus(f"no notes in {path}")
    patients = {pid: PatientRecord.build(pid, ns) for pid, ns in notes.items()}
    return Corpus.from_patients(patients)


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus as JSONL, one note per line, UTF-8 with LF endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for patient in corpus:
            for note in patient.notes:
                fh.write(json.dumps(
                    {
                        "patient_id": note.patient_id,
                        "timestamp": note.timestamp.isoformat(),
                        "text": note.text,
                    },
                    ensure_ascii=False,
                ))
                fh.write("\n")


def corpus_stats(corpus: Corpus) -> CorpusStats:
    """Patient count, note count, and mean/median notes per patient."""
    counts = [len(p.notes) for p in corpus]
    return CorpusStats(
        n_patients=len(counts),
        n_notes=sum(counts),
        mean_notes=sum(counts) / len(counts),
        median_notes=float(statistics.median(counts)),
    )
