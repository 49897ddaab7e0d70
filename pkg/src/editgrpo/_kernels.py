"""Dynamic-programming kernels shared by alignment, WER and DTW.

Every kernel exists twice: a numba ``@njit`` loop and a pure-numpy version
that vectorizes along rows or anti-diagonals. The numba path is used when
numba imports and ``EDITGRPO_NUMBA`` is not set to ``0``; the numpy path is
always importable so both can be tested against each other.
"""
from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("EDITGRPO_NUMBA", "1").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba ships with the default install
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("0", "false", "no", "off")


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# --- DTW -----------------------------------------------------------------


@_njit
def dtw_accumulate_numba(cost):
    n, m = cost.shape
    acc = np.empty((n, m))
    acc[0, 0] = cost[0, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
        for j in range(1, m):
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = cost[i, j] + best
    return acc


def dtw_accumulate_numpy(cost):
    """Anti-diagonal wavefront: every cell on diagonal ``i + j = k`` depends
    only on diagonals ``k - 1`` and ``k - 2``."""
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for k in range(n + m - 1):
        i = np.arange(max(0, k - m + 1), min(n, k + 1))
        j = k - i
        prev = np.minimum(np.minimum(acc[i, j], acc[i, j + 1]), acc[i + 1, j])
        acc[i + 1, j + 1] = cost[i, j] + prev
    return acc[1:, 1:]


@_njit
def dtw_backtrack_numba(acc):
    n, m = acc.shape
    path = np.empty((n + m - 1, 2), dtype=np.int64)
    i, j = n - 1, m - 1
    k = 0
    path[k, 0] = i
    path[k, 1] = j
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            d = acc[i - 1, j - 1]
            u = acc[i - 1, j]
            l = acc[i, j - 1]
            if d <= u and d <= l:
                i -= 1
                j -= 1
            elif u <= l:
                i -= 1
            else:
                j -= 1
        k += 1
        path[k, 0] = i
        path[k, 1] = j
    return path[: k + 1][::-1].copy()


def dtw_backtrack_numpy(acc):
    n, m = acc.shape
    i, j = n - 1, m - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            d, u, l = acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1]
            if d <= u and d <= l:
                i, j = i - 1, j - 1
            elif u <= l:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    return np.array(path[::-1], dtype=np.int64)


# --- Levenshtein with S/D/I counts --------------------------------------
# Backtrace preference on equal cost: match/substitution, then deletion,
# then insertion.


@_njit
def edit_counts_numba(ref, hyp):
    n, m = ref.shape[0], hyp.shape[0]
    d = np.empty((n + 1, m + 1), dtype=np.int64)
    for i in range(n + 1):
        d[i, 0] = i
    for j in range(m + 1):
        d[0, j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = d[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
            dele = d[i - 1, j] + 1
            ins = d[i, j - 1] + 1
            best = sub
            if dele < best:
                best = dele
            if ins < best:
                best = ins
            d[i, j] = best
    return _edit_backtrace(d, ref, hyp)


@_njit
def _edit_backtrace(d, ref, hyp):
    i, j = ref.shape[0], hyp.shape[0]
    s = 0
    de = 0
    ins = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            diff = 0 if ref[i - 1] == hyp[j - 1] else 1
            if d[i, j] == d[i - 1, j - 1] + diff:
                s += diff
                i -= 1
                j -= 1
                continue
        if i > 0 and d[i, j] == d[i - 1, j] + 1:
            de += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return s, de, ins


def edit_counts_numpy(ref, hyp):
    """Row-wise Levenshtein; the insertion chain within a row is a running
    minimum of ``row[j] - j``."""
    ref = np.asarray(ref)
    hyp = np.asarray(hyp)
    n, m = ref.shape[0], hyp.shape[0]
    d = np.empty((n + 1, m + 1), dtype=np.int64)
    d[0] = np.arange(m + 1)
    cols = np.arange(m + 1)
    for i in range(1, n + 1):
        row = np.empty(m + 1, dtype=np.int64)
        row[0] = i
        row[1:] = np.minimum(d[i - 1, :-1] + (ref[i - 1] != hyp), d[i - 1, 1:] + 1)
        d[i] = np.minimum.accumulate(row - cols) + cols
    return _edit_backtrace_py(d, ref, hyp)


def _edit_backtrace_py(d, ref, hyp):
    i, j = ref.shape[0], hyp.shape[0]
    s = de = ins = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            diff = int(ref[i - 1] != hyp[j - 1])
            if d[i, j] == d[i - 1, j - 1] + diff:
                s += diff
                i -= 1
                j -= 1
                continue
        if i > 0 and d[i, j] == d[i - 1, j] + 1:
            de += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return s, de, ins


# --- LCS (suffix table, forward greedy extraction) ----------------------


@_njit
def lcs_pairs_numba(a, b):
    n, m = a.shape[0], b.shape[0]
    s = np.zeros((n + 1, m + 1), dtype=np.int64)
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            if a[i] == b[j]:
                s[i, j] = s[i + 1, j + 1] + 1
            elif s[i + 1, j] >= s[i, j + 1]:
                s[i, j] = s[i + 1, j]
            else:
                s[i, j] = s[i, j + 1]
    return _lcs_extract(s, a, b)


@_njit
def _lcs_extract(s, a, b):
    n, m = a.shape[0], b.shape[0]
    out = np.empty((s[0, 0], 2), dtype=np.int64)
    i = 0
    j = 0
    k = 0
    while i < n and j < m:
        if a[i] == b[j]:
            out[k, 0] = i
            out[k, 1] = j
            k += 1
            i += 1
            j += 1
        elif s[i, j + 1] == s[i, j]:
            # skipping b[j] keeps a[i] available: earliest a-indices win
            j += 1
        else:
            i += 1
    return out


def lcs_pairs_numpy(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    n, m = a.shape[0], b.shape[0]
    s = np.zeros((n + 1, m + 1), dtype=np.int64)
    for i in range(n - 1, -1, -1):
        # s[i, j] = max(s[i+1, j], s[i, j+1], s[i+1, j+1] + eq): a suffix max
        cand = np.maximum(s[i + 1, :m], s[i + 1, 1:] + (a[i] == b))
        s[i, :m] = np.maximum.accumulate(cand[::-1])[::-1]
    out = []
    i = j = 0
    while i < n and j < m:
        if a[i] == b[j]:
            out.append((i, j))
            i += 1
            j += 1
        elif s[i, j + 1] == s[i, j]:
            j += 1
        else:
            i += 1
    return np.array(out, dtype=np.int64).reshape(-1, 2)


if USE_NUMBA:
    dtw_accumulate = dtw_accumulate_numba
    dtw_backtrack = dtw_backtrack_numba
    edit_counts = edit_counts_numba
    lcs_pairs = lcs_pairs_numba
else:
    dtw_accumulate = dtw_accumulate_numpy
    dtw_backtrack = dtw_backtrack_numpy
    edit_counts = edit_counts_numpy
    lcs_pairs = lcs_pairs_numpy

BACKENDS = {
    "numpy": (dtw_accumulate_numpy, dtw_backtrack_numpy, edit_counts_numpy, lcs_pairs_numpy),
}
if HAVE_NUMBA:
    BACKENDS["numba"] = (dtw_accumulate_numba, dtw_backtrack_numba, edit_counts_numba, lcs_pairs_numba)
