"""Dot-product scan kernels over float32 blocks with float64 accumulation.

Every row is reduced in the same fixed order whatever its position in the
block or in the candidate list, so a row's score is bitwise identical
between a full scan and a subset scan. BLAS gemv does not give that
guarantee, which would break exact cascade-vs-oracle agreement.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True, inline="always")
def _row_dot(block, r, q):
    d = q.shape[0]
    a0 = 0.0
    a1 = 0.0
    a2 = 0.0
    a3 = 0.0
    a4 = 0.0
    a5 = 0.0
    a6 = 0.0
    a7 = 0.0
    j = 0
    while j + 8 <= d:
        a0 += np.float64(block[r, j]) * q[j]
        a1 += np.float64(block[r, j + 1]) * q[j + 1]
        a2 += np.float64(block[r, j + 2]) * q[j + 2]
        a3 += np.float64(block[r, j + 3]) * q[j + 3]
        a4 += np.float64(block[r, j + 4]) * q[j + 4]
        a5 += np.float64(block[r, j + 5]) * q[j + 5]
        a6 += np.float64(block[r, j + 6]) * q[j + 6]
        a7 += np.float64(block[r, j + 7]) * q[j + 7]
        j += 8
    tail = 0.0
    while j < d:
        tail += np.float64(block[r, j]) * q[j]
        j += 1
    return (((a0 + a1) + (a2 + a3)) + ((a4 + a5) + (a6 + a7))) + tail


@njit(cache=True, nogil=True)
def _scan_all(block, q):
    out = np.empty(block.shape[0], dtype=np.float64)
    for i in range(block.shape[0]):
        out[i] = _row_dot(block, i, q)
    return out


@njit(cache=True, nogil=True)
def _scan_rows(block, rows, q):
    out = np.empty(rows.shape[0], dtype=np.float64)
    for i in range(rows.shape[0]):
        out[i] = _row_dot(block, rows[i], q)
    return out


def scan(block: np.ndarray, q: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
    """Scores of ``q`` against every row of ``block`` (or only ``rows``)."""
    q = np.ascontiguousarray(q, dtype=np.float64)
    if rows is None:
        return _scan_all(block, q)
    return _scan_rows(block, np.ascontiguousarray(rows, dtype=np.int64), q)
