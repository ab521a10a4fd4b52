"""All-pairs patient similarity: parallel computation and persistence.

The upper triangle of the score matrix is split into contiguous ranges
of linearized pair indices and farmed out to worker processes. Every
pair is scored by the same kernel on the same operands regardless of
chunking, so the output is bitwise identical for any worker count.
"""

from __future__ import annotations

import json
import multiprocessing
import re
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .exceptions import DimMismatch, FormatError, TooFewPatients
from .vectorizer import PatientMatrix

__all__ = [
    "VMETHODS",
    "MMETHODS",
    "RunConfig",
    "SimilarityMatrix",
    "compute_all_pairs",
    "align_to_ids",
    "combine_similarities",
    "persist_similarity",
    "load_similarity",
    "export_csv",
    "timing_report",
    "TimingReport",
]

# The evaluation grid runs these seven vectorizer legs; RunConfig itself
# accepts any <family><dim> label so pipelines can use other dimensions.
VMETHODS = ("lsa050", "lsa200", "d2v050", "d2v200", "rbc050", "rbc200", "combined")
MMETHODS = ("rv2", "mms", "eds")

_VMETHOD_RE = re.compile(r"^(lsa|d2v|rbc)(\d{3})$")

SIM_MAGIC = b"PATSIM-SIM-1\n"

# Below this many pairs the pool overhead outweighs any speedup; the
# cutoff depends only on the input, never on the worker count, so
# determinism across worker counts is preserved.
_MIN_PAIRS_FOR_POOL = 2048


@dataclass(frozen=True)
class RunConfig:
    """One cell of the (filter, vectorizer, measure) grid."""

    filter: bool
    vmethod: str
    mmethod: str
    category: str | None = None
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.vmethod != "combined" and not _VMETHOD_RE.match(self.vmethod):
            raise ValueError(
                f"vmethod must be 'combined' or <family><dim> like 'lsa050', "
                f"got {self.vmethod!r}"
            )
        if self.mmethod not in MMETHODS:
            raise ValueError(f"mmethod must be one of {MMETHODS}, got {self.mmethod!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def dim(self) -> int | None:
        """Embedding dimension encoded in the vectorizer name, if any."""
        tail = self.vmethod[-3:]
        return int(tail) if tail.isdigit() else None


@dataclass
class SimilarityMatrix:
    """Symmetric all-pairs scores for one run configuration.

    scores[i, j] == scores[j, i] exactly (the triangle is stored once and
    mirrored); undefined entries hold NaN with defined[i, j] False.
    """

    patient_ids: list[str]
    scores: np.ndarray
    defined: np.ndarray
    config: RunConfig
    wall_time_seconds: float = 0.0
    _index: dict[str, int] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self._index:
            self._index = {pid: i for i, pid in enumerate(self.patient_ids)}

    def index(self, patient_id: str) -> int:
        return self._index[patient_id]

    def get(self, id_a: str, id_b: str) -> tuple[float, bool]:
        i, j = self._index[id_a], self._index[id_b]
        return float(self.scores[i, j]), bool(self.defined[i, j])

    @property
    def n(self) -> int:
        return len(self.patient_ids)


def _pair_rows(n: int) -> np.ndarray:
    """Start offset of each row's pairs in the linearized upper triangle."""
    i = np.arange(n, dtype=np.int64)
    return i * (n - 1) - (i * (i - 1)) // 2


def _pair_ij(ks: np.ndarray, n: int, row_starts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    i = np.searchsorted(row_starts, ks, side="right") - 1
    j = ks - row_starts[i] + i + 1
    return i.astype(np.int64), j.astype(np.int64)


def _pack(matrices: Mapping[str, PatientMatrix], ids: Sequence[str], mmethod: str) -> dict:
    dim = matrices[ids[0]].rows.shape[1]
    payload: dict = {"mmethod": mmethod, "n": len(ids), "dim": dim}
    if mmethod == "rv2":
        grams = np.zeros((len(ids), dim * dim), dtype=np.float64)
        valid = np.zeros(len(ids), dtype=bool)
        for idx, pid in enumerate(ids):
            g = kernels.rv2_gram(matrices[pid].rows)
            if g is not None:
                grams[idx] = g
                valid[idx] = True
        payload["grams"] = grams
        payload["valid"] = valid
    else:
        counts = [matrices[pid].rows.shape[0] for pid in ids]
        offsets = np.zeros(len(ids) + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        rows = np.empty((offsets[-1], dim), dtype=np.float64)
        for idx, pid in enumerate(ids):
            rows[offsets[idx]:offsets[idx + 1]] = matrices[pid].rows
        payload["rows"] = np.ascontiguousarray(rows)
        payload["offsets"] = offsets
    return payload


def _score_range(payload: dict, start: int, stop: int, row_starts: np.ndarray
                 ) -> tuple[np.ndarray, np.ndarray]:
    ks = np.arange(start, stop, dtype=np.int64)
    ii, jj = _pair_ij(ks, payload["n"], row_starts)
    mmethod = payload["mmethod"]
    if mmethod == "rv2":
        scores = kernels.rv2_batch(payload["grams"], ii, jj)
        ok = payload["valid"][ii] & payload["valid"][jj]
        scores = np.where(ok, scores, np.nan)
        return scores, ok
    if mmethod == "mms":
        scores = kernels.mms_batch(payload["rows"], payload["offsets"], ii, jj)
    else:
        scores = kernels.eds_batch(payload["rows"], payload["offsets"], ii, jj)
    return scores, np.ones(ks.size, dtype=bool)


_WORKER_STATE: dict = {}


def _init_worker(payload: dict, row_starts: np.ndarray) -> None:
    _WORKER_STATE["payload"] = payload
    _WORKER_STATE["row_starts"] = row_starts


def _worker_chunk(args: tuple[int, int]) -> tuple[int, np.ndarray, np.ndarray]:
    start, stop = args
    scores, ok = _score_range(
        _WORKER_STATE["payload"], start, stop, _WORKER_STATE["row_starts"]
    )
    return start, scores, ok


def compute_all_pairs(
    matrices: Mapping[str, PatientMatrix], config: RunConfig
) -> SimilarityMatrix:
    """Score every unordered patient pair under one configuration.

    Patients are ordered by sorted id. The result does not depend on
    config.workers; only the wall time does.
    """
    ids = sorted(matrices)
    n = len(ids)
    if n < 2:
        raise TooFewPatients(f"need at least 2 patients, got {n}")
    dims = {matrices[pid].rows.shape[1] for pid in ids}
    if len(dims) != 1:
        raise DimMismatch(f"patient matrices disagree on dim: {sorted(dims)}")

    t0 = time.perf_counter()
    payload = _pack(matrices, ids, config.mmethod)
    row_starts = _pair_rows(n)
    npairs = n * (n - 1) // 2
    tri = np.empty(npairs, dtype=np.float64)
    tri_ok = np.empty(npairs, dtype=bool)

    if config.workers > 1 and npairs >= _MIN_PAIRS_FOR_POOL:
        kernels.warmup()  # children inherit compiled kernels after fork
        chunk = max(1, -(-npairs // (config.workers * 8)))
        ranges = [(s, min(s + chunk, npairs)) for s in range(0, npairs, chunk)]
        try:
            ctx = multiprocessing.get_context("fork")
        except ValueError:  # pragma: no cover - non-POSIX platforms
            ctx = multiprocessing.get_context()
        with ctx.Pool(
            processes=config.workers,
            initializer=_init_worker,
            initargs=(payload, row_starts),
        ) as pool:
            for start, scores, ok in pool.imap_unordered(_worker_chunk, ranges):
                tri[start:start + scores.size] = scores
                tri_ok[start:start + scores.size] = ok
    else:
        tri, tri_ok = _score_range(payload, 0, npairs, row_starts)

    scores = np.full((n, n), np.nan, dtype=np.float64)
    defined = np.zeros((n, n), dtype=bool)
    iu, ju = np.triu_indices(n, k=1)
    scores[iu, ju] = tri
    scores[ju, iu] = tri
    defined[iu, ju] = tri_ok
    defined[ju, iu] = tri_ok
    if config.mmethod == "rv2":
        diag_ok = payload["valid"]
    else:
        diag_ok = np.ones(n, dtype=bool)
    scores[np.arange(n), np.arange(n)] = np.where(diag_ok, 1.0, np.nan)
    defined[np.arange(n), np.arange(n)] = diag_ok

    wall = time.perf_counter() - t0
    return SimilarityMatrix(ids, scores, defined, config, wall)


def align_to_ids(sim: SimilarityMatrix, ids: Sequence[str]) -> SimilarityMatrix:
    """Re-index a similarity matrix onto a patient id list.

    Patients missing from the source stay undefined; present ones keep
    their exact scores. Used to put ensemble members on a common index.
    """
    index = {pid: i for i, pid in enumerate(sim.patient_ids)}
    n = len(ids)
    scores = np.full((n, n), np.nan, dtype=np.float64)
    defined = np.zeros((n, n), dtype=bool)
    present = [k for k, pid in enumerate(ids) if pid in index]
    src = [index[ids[k]] for k in present]
    if present:
        scores[np.ix_(present, present)] = sim.scores[np.ix_(src, src)]
        defined[np.ix_(present, present)] = sim.defined[np.ix_(src, src)]
    return SimilarityMatrix(list(ids), scores, defined, sim.config,
                            sim.wall_time_seconds)


def combine_similarities(
    members: Sequence[SimilarityMatrix], config: RunConfig
) -> SimilarityMatrix:
    """Average member score matrices entrywise over their defined legs.

    Members are first aligned onto the union of their patient sets, so a
    pair is undefined only when every member leaves it undefined.
    """
    if not members:
        raise TooFewPatients("no member similarity matrices to combine")
    ids = sorted(set().union(*(m.patient_ids for m in members)))
    members = [
        m if m.patient_ids == ids else align_to_ids(m, ids) for m in members
    ]
    t0 = time.perf_counter()
    vals = np.stack([m.scores for m in members])
    defs = np.stack([m.defined for m in members])
    count = defs.sum(axis=0)
    total = np.where(defs, vals, 0.0).sum(axis=0)
    scores = np.divide(total, count, out=np.full_like(total, np.nan),
                       where=count > 0)
    defined = count > 0
    wall = time.perf_counter() - t0
    return SimilarityMatrix(list(ids), scores, defined, config, wall)


# ---------------------------------------------------------------------------
# Persistence: magic, id table, packed triangle, definedness bitmaps and a
# JSON trailer with config and timing.
# ---------------------------------------------------------------------------

def persist_similarity(sim: SimilarityMatrix, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = sim.n
    iu, ju = np.triu_indices(n, k=1)
    tri = np.ascontiguousarray(sim.scores[iu, ju], dtype="<f8")
    tri_ok = sim.defined[iu, ju]
    diag_ok = sim.defined[np.arange(n), np.arange(n)]
    ids_blob = json.dumps(sim.patient_ids, ensure_ascii=False).encode("utf-8")
    trailer = json.dumps(
        {
            "version": 1,
            "config": asdict(sim.config),
            "wall_time_seconds": sim.wall_time_seconds,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(SIM_MAGIC)
        fh.write(struct.pack("<I", len(ids_blob)))
        fh.write(ids_blob)
        fh.write(struct.pack("<Q", tri.size))
        fh.write(tri.tobytes())
        fh.write(np.packbits(tri_ok, bitorder="little").tobytes())
        fh.write(np.packbits(diag_ok, bitorder="little").tobytes())
        fh.write(struct.pack("<I", len(trailer)))
        fh.write(trailer)


def _take(blob: bytes, off: int, count: int, what: str) -> tuple[bytes, int]:
    if off + count > len(blob):
        raise FormatError(f"similarity file truncated in {what}")
    return blob[off:off + count], off + count


def load_similarity(path: str | Path) -> SimilarityMatrix:
    path = Path(path)
    blob = path.read_bytes()
    if not blob.startswith(SIM_MAGIC):
        raise FormatError(f"{path} is not a similarity file (bad magic)")
    off = len(SIM_MAGIC)
    raw, off = _take(blob, off, 4, "id table length")
    (ids_len,) = struct.unpack("<I", raw)
    raw, off = _take(blob, off, ids_len, "id table")
    try:
        ids = json.loads(raw.decode("utf-8"))
    except ValueError as exc:
        raise FormatError(f"bad id table in {path}: {exc}")
    n = len(ids)
    raw, off = _take(blob, off, 8, "pair count")
    (npairs,) = struct.unpack("<Q", raw)
    if npairs != n * (n - 1) // 2:
        raise FormatError(f"pair count {npairs} does not match {n} ids")
    raw, off = _take(blob, off, npairs * 8, "triangle payload")
    tri = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    raw, off = _take(blob, off, (npairs + 7) // 8, "pair bitmap")
    tri_ok = np.unpackbits(
        np.frombuffer(raw, dtype=np.uint8), bitorder="little"
    )[:npairs].astype(bool)
    raw, off = _take(blob, off, (n + 7) // 8, "diagonal bitmap")
    diag_ok = np.unpackbits(
        np.frombuffer(raw, dtype=np.uint8), bitorder="little"
    )[:n].astype(bool)
    raw, off = _take(blob, off, 4, "trailer length")
    (tlen,) = struct.unpack("<I", raw)
    raw, off = _take(blob, off, tlen, "trailer")
    if off != len(blob):
        raise FormatError(f"trailing bytes in {path}")
    try:
        trailer = json.loads(raw.decode("utf-8"))
        if trailer["version"] != 1:
            raise FormatError(f"unsupported similarity version {trailer['version']}")
        config = RunConfig(**trailer["config"])
        wall = float(trailer["wall_time_seconds"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad trailer in {path}: {exc}")

    scores = np.full((n, n), np.nan, dtype=np.float64)
    defined = np.zeros((n, n), dtype=bool)
    iu, ju = np.triu_indices(n, k=1)
    scores[iu, ju] = tri
    scores[ju, iu] = tri
    defined[iu, ju] = tri_ok
    defined[ju, iu] = tri_ok
    scores[np.arange(n), np.arange(n)] = np.where(diag_ok, 1.0, np.nan)
    defined[np.arange(n), np.arange(n)] = diag_ok
    return SimilarityMatrix(list(ids), scores, defined, config, wall)


def export_csv(sim: SimilarityMatrix, path: str | Path) -> None:
    """Dump the upper triangle as id_a,id_b,score,defined rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id_a,id_b,score,defined\n")
        ids = sim.patient_ids
        for i in range(sim.n):
            for j in range(i + 1, sim.n):
                if sim.defined[i, j]:
                    fh.write(f"{ids[i]},{ids[j]},{sim.scores[i, j]:.17g},true\n")
                else:
                    fh.write(f"{ids[i]},{ids[j]},,false\n")


# ---------------------------------------------------------------------------
# Timing report.
# ---------------------------------------------------------------------------

@dataclass
class TimingReport:
    """Wall time per (measure, dimension), one row per executed run."""

    rows: list[tuple[str, int | None, float]]

    def render(self) -> str:
        dims = sorted({d for _, d, _ in self.rows if d is not None})
        lines = ["dimension  " + "  ".join(f"{m:>8}" for m in MMETHODS)]
        for d in dims:
            cells = []
            for m in MMETHODS:
                walls = [w for mm, dd, w in self.rows if mm == m and dd == d]
                cells.append(f"{np.mean(walls):8.2f}" if walls else f"{'-':>8}")
            lines.append(f"{d:>9}  " + "  ".join(cells))
        lines.append("(seconds per run)")
        return "\n".join(lines)

    def to_csv(self) -> str:
        out = ["mmethod,dim,wall_time_seconds"]
        for m, d, w in self.rows:
            out.append(f"{m},{'' if d is None else d},{w:.6f}")
        return "\n".join(out) + "\n"


def timing_report(runs: Sequence[SimilarityMatrix]) -> TimingReport:
    """Collect wall times of executed runs into a renderable table."""
    rows = [
        (r.config.mmethod, r.config.dim, r.wall_time_seconds) for r in runs
    ]
    return TimingReport(rows)
