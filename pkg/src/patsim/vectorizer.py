"""Note vectorization: TF-IDF + truncated SVD, plus an import channel.

Notes are turned into unit-norm embedding rows and stacked into one
matrix per patient (row k = the (k+1)-st retained note in chronological
order). Embeddings are either fitted here (latent semantic analysis over
TF-IDF) or read from a JSONL file produced by an external model.
"""

from __future__ import annotations

import json
import math
import re
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import (
    BadVector,
    DimMismatch,
    DimTooLarge,
    DuplicateKey,
    FormatError,
    MissingEmbedding,
    ParseError,
)

if TYPE_CHECKING:
    from .corpus import PatientRecord
    from .segmenter import FilteredNote

__all__ = [
    "tokenize",
    "VectorizerConfig",
    "LsaModel",
    "PatientMatrix",
    "randomized_svd",
    "fit_lsa",
    "embed",
    "import_embeddings",
    "compress_embeddings",
    "build_patient_matrix",
    "save_lsa_model",
    "load_lsa_model",
    "save_matrices",
    "load_matrices",
]

# Unicode alphanumeric runs; underscores split, digit+letter runs stay whole
# ("100mg" is one token).
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

LSA_MAGIC = b"PATSIM-LSA-1\n"
MAT_MAGIC = b"PATSIM-MAT-1\n"
_ZERO_NORM = 1e-12


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs; 1-char tokens kept."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class VectorizerConfig:
    """Settings for one vectorization leg.

    method "lsa" fits a model on the corpus; "import" reads precomputed
    vectors from import_path. The grid runs use dim 50 and 200, but any
    positive dim is accepted.
    """

    method: str = "lsa"
    dim: int = 50
    import_path: str | Path | None = None
    seed: int = 0
    min_doc_freq: int = 1
    sublinear_tf: bool = True

    def __post_init__(self):
        if self.method not in ("lsa", "import"):
            raise ValueError(f"unknown vectorizer method {self.method!r}")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.method == "import" and self.import_path is None:
            raise ValueError("method 'import' requires import_path")
        if self.min_doc_freq < 1:
            raise ValueError("min_doc_freq must be >= 1")


@dataclass
class LsaModel:
    """Fitted TF-IDF + truncated SVD model.

    projection has orthonormal columns (right singular vectors), so an
    embedding is the document's normalized TF-IDF row times projection.
    """

    vocabulary: dict[str, int]
    idf: np.ndarray
    projection: np.ndarray  # (vocab_size, dim)
    dim: int
    sublinear_tf: bool = True


@dataclass
class PatientMatrix:
    """Stacked unit-norm note embeddings for one patient.

    note_indices maps each row back to the note's position in the
    patient's original chronological sequence.
    """

    patient_id: str
    rows: np.ndarray          # (n, d) float64, every row unit L2 norm
    note_indices: np.ndarray  # (n,) int64

    @property
    def n_notes(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def randomized_svd(
    x,
    k: int,
    oversample: int = 10,
    min_power_iters: int = 4,
    max_power_iters: int = 200,
    rtol: float = 3e-9,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Truncated SVD by randomized subspace iteration.

    Returns (singular_values[:k], vt[:k]). Power iterations continue past
    the minimum until the top-k singular value estimates stabilize to
    rtol, so tight accuracy holds even on slowly decaying spectra.
    Deterministic for a fixed seed. Accepts dense or scipy.sparse input.
    """
    n, v = x.shape
    if k < 1 or k > min(n, v):
        raise DimTooLarge(f"rank {k} not in [1, {min(n, v)}]")
    rng = np.random.default_rng(seed)
    width = min(k + oversample, min(n, v))
    omega = rng.standard_normal((v, width))
    q, _ = np.linalg.qr(x @ omega)
    s_prev = None
    for it in range(1, max_power_iters + 1):
        z, _ = np.linalg.qr(x.T @ q)
        q, _ = np.linalg.qr(x @ z)
        if it < min_power_iters:
            continue
        b = q.T @ x
        b = np.asarray(b)
        s = np.linalg.svd(b, compute_uv=False)[:k]
        if s_prev is not None:
            change = np.max(np.abs(s - s_prev) / np.maximum(s, _ZERO_NORM))
            if change < rtol:
                break
        s_prev = s
    b = np.asarray(q.T @ x)
    _, s, vt = np.linalg.svd(b, full_matrices=False)
    return s[:k].copy(), vt[:k].copy()


def _tf_weight(count: float, sublinear: bool) -> float:
    return 1.0 + math.log(count) if sublinear else float(count)


def fit_lsa(docs: Sequence[str], config: VectorizerConfig) -> LsaModel:
    """Fit TF-IDF weights and a rank-dim projection on a document set.

    tf is the raw count, or 1 + ln(count) when sublinear_tf is set;
    idf = ln((1 + N) / (1 + df)) + 1. Rows are L2-normalized before the
    SVD. Raises DimTooLarge when there are fewer non-empty documents, or
    fewer vocabulary terms, than dim.
    """
    tokenized = [tokenize(d) for d in docs]
    n_docs = len(tokenized)
    nonempty = sum(1 for t in tokenized if t)
    if nonempty < config.dim:
        raise DimTooLarge(
            f"{nonempty} non-empty documents < dim {config.dim}"
        )
    df: Counter[str] = Counter()
    for toks in tokenized:
        df.update(set(toks))
    terms = sorted(t for t, c in df.items() if c >= config.min_doc_freq)
    if len(terms) < config.dim:
        raise DimTooLarge(f"vocabulary {len(terms)} < dim {config.dim}")
    vocabulary = {t: i for i, t in enumerate(terms)}
    idf = np.array(
        [math.log((1 + n_docs) / (1 + df[t])) + 1.0 for t in terms], dtype=np.float64
    )

    data: list[float] = []
    indices: list[int] = []
    indptr = [0]
    for toks in tokenized:
        counts = Counter(t for t in toks if t in vocabulary)
        row = sorted((vocabulary[t], c) for t, c in counts.items())
        weights = np.array(
            [_tf_weight(c, config.sublinear_tf) * idf[j] for j, c in row],
            dtype=np.float64,
        )
        norm = np.linalg.norm(weights)
        if norm > _ZERO_NORM:
            weights /= norm
        data.extend(weights)
        indices.extend(j for j, _ in row)
        indptr.append(len(indices))
    x = sp.csr_matrix(
        (np.array(data), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(n_docs, len(terms)),
    )
    _, vt = randomized_svd(x, config.dim, seed=config.seed)
    return LsaModel(
        vocabulary=vocabulary,
        idf=idf,
        projection=np.ascontiguousarray(vt.T),
        dim=config.dim,
        sublinear_tf=config.sublinear_tf,
    )


def embed(model: LsaModel, text: str) -> np.ndarray | None:
    """Embed one text; returns None when no known token survives.

    Identical texts always map to identical vectors; repeating a text
    changes tf only, which the final normalization cancels when tf is
    linear.
    """
    counts = Counter(t for t in tokenize(text) if t in model.vocabulary)
    if not counts:
        return None
    cols = np.array([model.vocabulary[t] for t in sorted(counts)], dtype=np.int64)
    weights = np.array(
        [_tf_weight(counts[t], model.sublinear_tf) for t in sorted(counts)],
        dtype=np.float64,
    )
    weights *= model.idf[cols]
    norm = np.linalg.norm(weights)
    if norm <= _ZERO_NORM:
        return None
    weights /= norm
    vec = model.projection[cols].T @ weights
    vnorm = np.linalg.norm(vec)
    if vnorm <= _ZERO_NORM:
        return None
    return vec / vnorm


def import_embeddings(
    path: str | Path, expected_dim: int | None = None
) -> dict[tuple[str, int], np.ndarray]:
    """Read a JSONL embedding file keyed by (patient_id, note_index).

    Each line holds patient_id, note_index and vector. Vectors are
    validated (dimension, finiteness, nonzero norm) and L2-normalized.
    """
    path = Path(path)
    out: dict[tuple[str, int], np.ndarray] = {}
    dim = expected_dim
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except ValueError as exc:
                raise ParseError(f"bad JSON: {exc}", path=path, line=lineno)
            try:
                key = (str(obj["patient_id"]), int(obj["note_index"]))
                vec = np.asarray(obj["vector"], dtype=np.float64)
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad record: {exc}", path=path, line=lineno)
            if vec.ndim != 1:
                raise BadVector(f"vector for {key} is not one-dimensional")
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise DimMismatch(
                    f"vector for {key} has dim {vec.size}, expected {dim}"
                )
            if not np.all(np.isfinite(vec)):
                raise BadVector(f"non-finite value in vector for {key}")
            norm = np.linalg.norm(vec)
            if norm <= _ZERO_NORM:
                raise BadVector(f"zero vector for {key}")
            if key in out:
                raise DuplicateKey(f"duplicate embedding key {key}")
            out[key] = vec / norm
    return out


def compress_embeddings(
    embeddings: Mapping[tuple[str, int], np.ndarray], dim: int, seed: int = 0
) -> dict[tuple[str, int], np.ndarray]:
    """Project imported vectors down to dim via the same truncated SVD.

    Used when an external model's native dimension exceeds the configured
    one. Vectors that fall entirely outside the retained subspace come
    back as zero rows and are dropped later like other zero embeddings.
    """
    if not embeddings:
        return {}
    keys = sorted(embeddings)
    stack = np.stack([embeddings[k] for k in keys])
    native = stack.shape[1]
    if native == dim:
        return {k: embeddings[k] for k in keys}
    if native < dim:
        raise DimMismatch(f"cannot expand dim {native} vectors to {dim}")
    # rank cannot exceed the number of vectors; missing directions are
    # zero-padded so the output dimension still matches the request
    rank = min(dim, stack.shape[0])
    _, vt = randomized_svd(stack, rank, seed=seed)
    proj = stack @ vt.T
    if rank < dim:
        proj = np.pad(proj, ((0, 0), (0, dim - rank)))
    norms = np.linalg.norm(proj, axis=1)
    safe = np.where(norms > _ZERO_NORM, norms, 1.0)
    proj /= safe[:, None]
    proj[norms <= _ZERO_NORM] = 0.0
    return {k: proj[i] for i, k in enumerate(keys)}


def build_patient_matrix(
    patient: "PatientRecord",
    filtered: Sequence["FilteredNote"],
    embedder: LsaModel | Mapping[tuple[str, int], np.ndarray],
) -> PatientMatrix | None:
    """Stack embeddings of the retained notes into one patient matrix.

    Notes that embed to zero (out-of-vocabulary, or annihilated by an
    import-side compression) are dropped. Returns None when nothing
    remains; the patient is then absent from that run.
    """
    rows: list[np.ndarray] = []
    kept: list[int] = []
    for note in filtered:
        if isinstance(embedder, LsaModel):
            vec = embed(embedder, note.text)
        else:
            key = (patient.patient_id, note.note_index)
            if key not in embedder:
                raise MissingEmbedding(f"no imported embedding for {key}")
            vec = embedder[key]
            norm = np.linalg.norm(vec)
            if norm <= _ZERO_NORM:
                vec = None
            elif abs(norm - 1.0) > 1e-9:
                vec = vec / norm
        if vec is not None:
            rows.append(np.asarray(vec, dtype=np.float64))
            kept.append(note.note_index)
    if not rows:
        return None
    return PatientMatrix(
        patient_id=patient.patient_id,
        rows=np.ascontiguousarray(np.vstack(rows)),
        note_indices=np.asarray(kept, dtype=np.int64),
    )


def save_lsa_model(model: LsaModel, path: str | Path) -> None:
    """Write a model dump: magic header, JSON metadata, raw arrays."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    terms = sorted(model.vocabulary, key=model.vocabulary.__getitem__)
    header = json.dumps(
        {
            "dim": model.dim,
            "sublinear_tf": model.sublinear_tf,
            "vocab_size": len(terms),
            "vocabulary": terms,
        },
        ensure_ascii=False,
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(LSA_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(model.idf, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.projection, dtype="<f8").tobytes())


def save_matrices(
    matrices: Mapping[str, PatientMatrix],
    path: str | Path,
    meta: Mapping[str, object] | None = None,
) -> None:
    """Write a set of patient matrices as one deterministic binary file.

    Layout: magic, JSON header (dim, patient ids, row counts, caller
    metadata), then all note indices and all rows as raw little-endian
    arrays. Byte-identical for identical inputs, so pipeline outputs can
    be compared directly.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ids = sorted(matrices)
    if not ids:
        raise FormatError("refusing to write an empty matrix container")
    dim = matrices[ids[0]].rows.shape[1]
    counts = [int(matrices[pid].rows.shape[0]) for pid in ids]
    header = json.dumps(
        {
            "dim": dim,
            "ids": ids,
            "counts": counts,
            "meta": dict(meta or {}),
        },
        ensure_ascii=False,
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for pid in ids:
            fh.write(np.ascontiguousarray(
                matrices[pid].note_indices, dtype="<i8").tobytes())
        for pid in ids:
            m = matrices[pid]
            if m.rows.shape[1] != dim:
                raise DimMismatch(f"matrix for {pid} has dim {m.rows.shape[1]}")
            fh.write(np.ascontiguousarray(m.rows, dtype="<f8").tobytes())


def load_matrices(
    path: str | Path,
) -> tuple[dict[str, PatientMatrix], dict[str, object]]:
    """Read a matrix container; returns (matrices, caller metadata)."""
    path = Path(path)
    blob = path.read_bytes()
    if not blob.startswith(MAT_MAGIC):
        raise FormatError(f"{path} is not a matrix container (bad magic)")
    off = len(MAT_MAGIC)
    try:
        (hlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        header = json.loads(blob[off:off + hlen].decode("utf-8"))
        off += hlen
        dim = int(header["dim"])
        ids = header["ids"]
        counts = [int(c) for c in header["counts"]]
    except (KeyError, ValueError, struct.error) as exc:
        raise FormatError(f"corrupt matrix container {path}: {exc}")
    total = sum(counts)
    need = off + total * 8 + total * dim * 8
    if need != len(blob):
        raise FormatError(f"matrix container {path} has wrong payload size")
    note_idx = np.frombuffer(blob, dtype="<i8", count=total, offset=off)
    off += total * 8
    rows = np.frombuffer(blob, dtype="<f8", count=total * dim, offset=off)
    rows = rows.reshape(total, dim)
    matrices: dict[str, PatientMatrix] = {}
    pos = 0
    for pid, count in zip(ids, counts):
        matrices[pid] = PatientMatrix(
            patient_id=pid,
            rows=np.ascontiguousarray(rows[pos:pos + count]),
            note_indices=note_idx[pos:pos + count].astype(np.int64),
        )
        pos += count
    return matrices, dict(header.get("meta", {}))


def load_lsa_model(path: str | Path) -> LsaModel:
    path = Path(path)
    blob = path.read_bytes()
    if not blob.startswith(LSA_MAGIC):
        raise FormatError(f"{path} is not a model dump (bad magic)")
    off = len(LSA_MAGIC)
    try:
        (hlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        header = json.loads(blob[off:off + hlen].decode("utf-8"))
        off += hlen
        vocab_size = int(header["vocab_size"])
        dim = int(header["dim"])
        terms = header["vocabulary"]
        idf = np.frombuffer(blob, dtype="<f8", count=vocab_size, offset=off).copy()
        off += vocab_size * 8
        proj = np.frombuffer(
            blob, dtype="<f8", count=vocab_size * dim, offset=off
        ).reshape(vocab_size, dim).copy()
        off += vocab_size * dim * 8
    except (KeyError, ValueError, struct.error) as exc:
        raise FormatError(f"corrupt model dump {path}: {exc}")
    if off != len(blob):
        raise FormatError(f"trailing bytes in model dump {path}")
    if len(terms) != vocab_size:
        raise FormatError(f"vocabulary length mismatch in {path}")
    return LsaModel(
        vocabulary={t: i for i, t in enumerate(terms)},
        idf=idf,
        projection=proj,
        dim=dim,
        sublinear_tf=bool(header["sublinear_tf"]),
    )
