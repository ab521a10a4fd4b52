"""Matrix similarity scores between two patients.

Three measures reduce a pair of patient matrices (rows = unit-norm note
embeddings) to one number:

- rv2: correlation of the column cross-product structures. Both d x d
  cross-products get their diagonals zeroed, then
  score = tr(Ga Gb) / sqrt(tr(Ga Ga) tr(Gb Gb)), bounded in [-1, 1].
  The d x d form makes patients with different note counts comparable.
- mms: mean of the concatenated row-wise and column-wise maxima of the
  pairwise cosine matrix; ignores note order entirely.
- eds: greatest mean cosine along a monotone alignment path from the
  first to the last notes of both patients (warping-style; diagonal
  steps allowed), so note order matters.

An ensemble score averages whatever member scores are defined.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .exceptions import ConfigError, DegenerateInput, DimMismatch
from .vectorizer import PatientMatrix

__all__ = [
    "SimScore",
    "UNDEFINED_SCORE",
    "cross_sim",
    "rv2",
    "mms",
    "eds",
    "eds_alignment",
    "pair_diagnostic",
    "combined",
]


class SimScore(NamedTuple):
    """A similarity value plus whether it is defined at all."""

    value: float
    defined: bool


UNDEFINED_SCORE = SimScore(float("nan"), False)


def _rows(m) -> np.ndarray:
    if isinstance(m, PatientMatrix):
        return m.rows
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DimMismatch(f"expected a 2-d matrix, got shape {arr.shape}")
    return arr


def _paired_rows(a, b) -> tuple[np.ndarray, np.ndarray]:
    ra, rb = _rows(a), _rows(b)
    if ra.shape[1] != rb.shape[1]:
        raise DimMismatch(
            f"embedding dims differ: {ra.shape[1]} vs {rb.shape[1]}"
        )
    return ra, rb


def cross_sim(a, b) -> np.ndarray:
    """Pairwise cosine matrix A @ B.T (rows are unit vectors)."""
    ra, rb = _paired_rows(a, b)
    return ra @ rb.T


def rv2(a, b) -> SimScore:
    """Diagonal-removed cross-product correlation of two patient matrices.

    Undefined when either matrix's off-diagonal cross-product vanishes
    (for example exactly orthogonal columns); callers must not read the
    value in that case.
    """
    ra, rb = _paired_rows(a, b)
    ga = kernels.rv2_gram(ra)
    gb = kernels.rv2_gram(rb)
    if ga is None or gb is None:
        return UNDEFINED_SCORE
    return SimScore(kernels.rv2_score(ga, gb), True)


def mms(a, b) -> SimScore:
    """Best note-to-note matching score, order-free."""
    ra, rb = _paired_rows(a, b)
    return SimScore(kernels.mms_score(ra, rb), True)


def eds(a, b) -> SimScore:
    """Best time-consistent alignment score, order-sensitive."""
    c = cross_sim(a, b)
    return SimScore(kernels.eds_score(c), True)


def eds_alignment(a, b) -> tuple[SimScore, list[tuple[int, int]]]:
    """eds score together with one optimal path, for diagnostics."""
    c = cross_sim(a, b)
    score, path = kernels.eds_best_path(c)
    return SimScore(score, True), path


def pair_diagnostic(a, b, method: str) -> dict:
    """JSON-ready per-pair record: method, score, and the eds path.

    Matches the optional diagnostic dump format: the path appears only
    for the alignment method (as [i, j] cell pairs).
    """
    fn = {"rv2": rv2, "mms": mms, "eds": eds}.get(method)
    if fn is None:
        raise ConfigError(f"unknown similarity method {method!r}")
    out: dict = {"method": method}
    if method == "eds":
        score, path = eds_alignment(a, b)
        out["path"] = [[int(i), int(j)] for i, j in path]
    else:
        score = fn(a, b)
    out["score"] = score.value if score.defined else None
    out["defined"] = score.defined
    return out


def combined(scores: Sequence[SimScore]) -> SimScore:
    """Mean of the defined member scores; undefined only when all are."""
    if len(scores) == 0:
        raise DegenerateInput("combined() needs at least one member score")
    vals = [s.value for s in scores if s.defined]
    if not vals:
        return UNDEFINED_SCORE
    return SimScore(float(np.mean(vals)), True)
