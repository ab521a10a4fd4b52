"""Hot scoring kernels: numba-compiled loops with a pure-numpy fallback.

The backend is chosen once at import time from the PATSIM_NUMBA
environment variable: "0"/"off"/"false"/"no" forces the numpy fallback,
anything else (or unset) uses numba when it imports. Both lanes stay
importable so the benchmark can time them side by side; `BACKEND` tells
which one the dispatchers use.

Score conventions used throughout:

- a cross matrix c holds cosine similarities of one patient's note rows
  against another's (c = A @ B.T for unit rows);
- the alignment score is the greatest arithmetic mean of cell values
  over monotone paths from c[0, 0] to c[-1, -1] with steps down, right
  and diagonal. The mean objective has no additive substructure, so it
  is solved exactly by Dinkelbach iteration: for a level lam, a plain
  max-sum dynamic program on (c - lam) finds the best path; its raw
  mean becomes the next lam. The level sequence is non-decreasing and
  reaches the optimum in finitely many steps.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "BACKEND",
    "NUMBA_AVAILABLE",
    "eds_score",
    "eds_score_with_iters",
    "eds_trace",
    "eds_best_path",
    "mms_score",
    "rv2_gram",
    "rv2_score",
    "rv2_batch",
    "mms_batch",
    "eds_batch",
    "warmup",
]

_MAX_DINKELBACH_ITERS = 100


def _numba_wanted() -> bool:
    flag = os.environ.get("PATSIM_NUMBA", "auto").strip().lower()
    return flag not in ("0", "off", "false", "no")


NUMBA_AVAILABLE = False
if _numba_wanted():
    try:
        from numba import njit as _njit

        NUMBA_AVAILABLE = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_AVAILABLE = False

BACKEND = "numba" if NUMBA_AVAILABLE else "numpy"


# ---------------------------------------------------------------------------
# Loop kernels. Written as plain nested loops so numba can compile them;
# when numba is active the names below are rebound to their jitted forms.
# ---------------------------------------------------------------------------

def _eds_score_loops(c):
    n1, n2 = c.shape
    lam = c[0, 0]
    for i in range(n1):
        for j in range(n2):
            if c[i, j] < lam:
                lam = c[i, j]
    d_prev = np.empty(n2)
    s_prev = np.empty(n2)
    l_prev = np.empty(n2, dtype=np.int64)
    d_cur = np.empty(n2)
    s_cur = np.empty(n2)
    l_cur = np.empty(n2, dtype=np.int64)
    iters = 0
    for _ in range(_MAX_DINKELBACH_ITERS):
        d_prev[0] = c[0, 0] - lam
        s_prev[0] = c[0, 0]
        l_prev[0] = 1
        for j in range(1, n2):
            d_prev[j] = d_prev[j - 1] + c[0, j] - lam
            s_prev[j] = s_prev[j - 1] + c[0, j]
            l_prev[j] = j + 1
        for i in range(1, n1):
            d_cur[0] = d_prev[0] + c[i, 0] - lam
            s_cur[0] = s_prev[0] + c[i, 0]
            l_cur[0] = l_prev[0] + 1
            for j in range(1, n2):
                # best predecessor, ties broken diagonal > up > left
                best = d_prev[j - 1]
                bs = s_prev[j - 1]
                bl = l_prev[j - 1]
                if d_prev[j] > best:
                    best = d_prev[j]
                    bs = s_prev[j]
                    bl = l_prev[j]
                if d_cur[j - 1] > best:
                    best = d_cur[j - 1]
                    bs = s_cur[j - 1]
                    bl = l_cur[j - 1]
                d_cur[j] = best + c[i, j] - lam
                s_cur[j] = bs + c[i, j]
                l_cur[j] = bl + 1
            d_prev, d_cur = d_cur, d_prev
            s_prev, s_cur = s_cur, s_prev
            l_prev, l_cur = l_cur, l_prev
        ratio = s_prev[n2 - 1] / l_prev[n2 - 1]
        if not ratio > lam:
            break
        lam = ratio
        iters += 1
    return lam, iters


def _mms_score_loops(a, b):
    n1 = a.shape[0]
    n2 = b.shape[0]
    d = a.shape[1]
    col_max = np.full(n2, -np.inf)
    total = 0.0
    for i in range(n1):
        row_max = -np.inf
        for j in range(n2):
            s = 0.0
            for k in range(d):
                s += a[i, k] * b[j, k]
            if s > row_max:
                row_max = s
            if s > col_max[j]:
                col_max[j] = s
        total += row_max
    for j in range(n2):
        total += col_max[j]
    return total / (n1 + n2)


def _rv2_batch_loops(grams, ii, jj, out):
    dd = grams.shape[1]
    for p in range(ii.size):
        ga = grams[ii[p]]
        gb = grams[jj[p]]
        s = 0.0
        for k in range(dd):
            s += ga[k] * gb[k]
        out[p] = s


def _mms_batch_loops(rows, offsets, ii, jj, out):
    for p in range(ii.size):
        a = rows[offsets[ii[p]]:offsets[ii[p] + 1]]
        b = rows[offsets[jj[p]]:offsets[jj[p] + 1]]
        out[p] = _mms_score_loops(a, b)


def _eds_batch_loops(rows, offsets, ii, jj, out):
    d = rows.shape[1]
    for p in range(ii.size):
        i0 = offsets[ii[p]]
        i1 = offsets[ii[p] + 1]
        j0 = offsets[jj[p]]
        j1 = offsets[jj[p] + 1]
        na = i1 - i0
        nb = j1 - j0
        c = np.empty((na, nb))
        for x in range(na):
            for y in range(nb):
                s = 0.0
                for k in range(d):
                    s += rows[i0 + x, k] * rows[j0 + y, k]
                c[x, y] = s
        score, _ = _eds_score_loops(c)
        out[p] = score


if NUMBA_AVAILABLE:
    _eds_score_loops = _njit(cache=True)(_eds_score_loops)
    _mms_score_loops = _njit(cache=True)(_mms_score_loops)
    _rv2_batch_loops = _njit(cache=True)(_rv2_batch_loops)
    _mms_batch_loops = _njit(cache=True)(_mms_batch_loops)
    _eds_batch_loops = _njit(cache=True)(_eds_batch_loops)


# ---------------------------------------------------------------------------
# Numpy fallback lane. The alignment DP is vectorized one row at a time:
# entering row i at column t and walking right to column j accumulates
# m[t] + cum[j] - cum[t-1], so each row reduces to a running maximum.
# ---------------------------------------------------------------------------

def _eds_dp_numpy(cp: np.ndarray) -> np.ndarray:
    n1, n2 = cp.shape
    d = np.empty_like(cp)
    np.cumsum(cp[0], out=d[0])
    for i in range(1, n1):
        m = np.empty(n2)
        m[0] = d[i - 1, 0]
        np.maximum(d[i - 1, 1:], d[i - 1, :-1], out=m[1:])
        cum = np.cumsum(cp[i])
        shifted = np.empty(n2)
        shifted[0] = 0.0
        shifted[1:] = cum[:-1]
        d[i] = cum + np.maximum.accumulate(m - shifted)
    return d


def _eds_backtrack(d: np.ndarray, cp: np.ndarray) -> list[tuple[int, int]]:
    i, j = d.shape[0] - 1, d.shape[1] - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        best = -np.inf
        move = None
        if i > 0 and j > 0 and d[i - 1, j - 1] >= best:
            best = d[i - 1, j - 1]
            move = (i - 1, j - 1)
        if i > 0 and d[i - 1, j] > best:
            best = d[i - 1, j]
            move = (i - 1, j)
        if j > 0 and d[i, j - 1] > best:
            best = d[i, j - 1]
            move = (i, j - 1)
        i, j = move
        path.append(move)
    path.reverse()
    return path


def _path_mean(c: np.ndarray, path: list[tuple[int, int]]) -> float:
    total = 0.0
    for i, j in path:
        total += c[i, j]
    return total / len(path)


def _eds_score_numpy(c, collect_trace: bool = False):
    c = np.asarray(c, dtype=np.float64)
    lam = float(c.min())
    trace = [lam]
    iters = 0
    for _ in range(_MAX_DINKELBACH_ITERS):
        d = _eds_dp_numpy(c - lam)
        path = _eds_backtrack(d, c)
        ratio = _path_mean(c, path)
        if not ratio > lam:
            break
        lam = ratio
        iters += 1
        trace.append(lam)
    if collect_trace:
        return lam, iters, trace
    return lam, iters


def _mms_score_numpy(a, b) -> float:
    c = a @ b.T
    return float((c.max(axis=1).sum() + c.max(axis=0).sum())
                 / (c.shape[0] + c.shape[1]))


# ---------------------------------------------------------------------------
# Public dispatchers.
# ---------------------------------------------------------------------------

def eds_score_with_iters(c: np.ndarray) -> tuple[float, int]:
    """Alignment score plus the number of Dinkelbach level updates."""
    c = np.ascontiguousarray(c, dtype=np.float64)
    if NUMBA_AVAILABLE:
        lam, iters = _eds_score_loops(c)
        return float(lam), int(iters)
    lam, iters = _eds_score_numpy(c)
    return float(lam), int(iters)


def eds_score(c: np.ndarray) -> float:
    """Greatest mean over monotone corner-to-corner paths through c."""
    return eds_score_with_iters(c)[0]


def eds_trace(c: np.ndarray) -> tuple[float, list[float]]:
    """Score plus the full level sequence (numpy lane; for diagnostics)."""
    lam, _, trace = _eds_score_numpy(np.asarray(c, dtype=np.float64), True)
    return float(lam), trace


def eds_best_path(c: np.ndarray) -> tuple[float, list[tuple[int, int]]]:
    """Score plus one optimal path, for plotting alignment overlays."""
    c = np.asarray(c, dtype=np.float64)
    lam, _ = _eds_score_numpy(c)
    path = _eds_backtrack(_eds_dp_numpy(c - lam), c)
    return float(lam), path


def mms_score(a: np.ndarray, b: np.ndarray) -> float:
    """Mean of the concatenated row-wise and column-wise cosine maxima."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if NUMBA_AVAILABLE:
        return float(_mms_score_loops(a, b))
    return _mms_score_numpy(a, b)


def rv2_gram(rows: np.ndarray) -> np.ndarray | None:
    """Flattened, Frobenius-normalized column cross-product with zero diagonal.

    Returns None when the off-diagonal part vanishes (single column, or
    exactly orthogonal columns); such a patient has no defined
    correlation score.
    """
    g = rows.T @ rows
    np.fill_diagonal(g, 0.0)
    norm = np.linalg.norm(g)
    if norm == 0.0:
        return None
    return np.ascontiguousarray((g / norm).ravel())


def rv2_score(ga: np.ndarray, gb: np.ndarray) -> float:
    """Cosine of two prepared gram vectors; in [-1, 1] by Cauchy-Schwarz."""
    return float(np.dot(ga, gb))


def rv2_batch(grams: np.ndarray, ii: np.ndarray, jj: np.ndarray) -> np.ndarray:
    """Scores for index pairs (ii[p], jj[p]) over prepared gram rows."""
    out = np.empty(ii.size, dtype=np.float64)
    if NUMBA_AVAILABLE:
        _rv2_batch_loops(grams, ii, jj, out)
    else:
        for p in range(ii.size):
            out[p] = np.dot(grams[ii[p]], grams[jj[p]])
    return out


def mms_batch(
    rows: np.ndarray, offsets: np.ndarray, ii: np.ndarray, jj: np.ndarray
) -> np.ndarray:
    out = np.empty(ii.size, dtype=np.float64)
    if NUMBA_AVAILABLE:
        _mms_batch_loops(rows, offsets, ii, jj, out)
    else:
        for p in range(ii.size):
            a = rows[offsets[ii[p]]:offsets[ii[p] + 1]]
            b = rows[offsets[jj[p]]:offsets[jj[p] + 1]]
            out[p] = _mms_score_numpy(a, b)
    return out


def eds_batch(
    rows: np.ndarray, offsets: np.ndarray, ii: np.ndarray, jj: np.ndarray
) -> np.ndarray:
    out = np.empty(ii.size, dtype=np.float64)
    if NUMBA_AVAILABLE:
        _eds_batch_loops(rows, offsets, ii, jj, out)
    else:
        for p in range(ii.size):
            a = rows[offsets[ii[p]]:offsets[ii[p] + 1]]
            b = rows[offsets[jj[p]]:offsets[jj[p] + 1]]
            out[p], _ = _eds_score_numpy(a @ b.T)
    return out


def warmup() -> None:
    """Force JIT compilation (or disk-cache load) of every kernel.

    Called before forking worker processes so children inherit compiled
    code instead of each paying the compilation cost.
    """
    rows = np.ascontiguousarray(np.eye(2, 3))
    offsets = np.array([0, 1, 2], dtype=np.int64)
    ii = np.array([0], dtype=np.int64)
    jj = np.array([1], dtype=np.int64)
    grams = np.ascontiguousarray(np.ones((2, 4)))
    eds_score(np.ones((2, 2)))
    mms_score(rows[:1], rows[1:])
    rv2_batch(grams, ii, jj)
    mms_batch(rows, offsets, ii, jj)
    eds_batch(rows, offsets, ii, jj)
