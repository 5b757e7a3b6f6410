"""CRC-64/XZ (ECMA-182 polynomial, reflected, init and xorout all ones).

Check value: ``crc64(b"123456789") == 0x995DC9BBDF1939FA``.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_POLY_REFLECTED = 0xC96C5795D7870F42
_MASK = 0xFFFFFFFFFFFFFFFF


def _make_table() -> np.ndarray:
    table = np.zeros(256, dtype=np.uint64)
    for i in range(256):
        crc = i
        for _ in range(8):
            crc = (crc >> 1) ^ _POLY_REFLECTED if crc & 1 else crc >> 1
        table[i] = crc
    return table


_TABLE = _make_table()


@njit(cache=True, nogil=True)
def _update(state, data, table):
    crc = state
    for b in data:
        crc = table[(crc ^ np.uint64(b)) & np.uint64(0xFF)] ^ (crc >> np.uint64(8))
    return crc


class Crc64:
    """Incremental hasher, so large payloads can be fed block by block."""

    def __init__(self) -> None:
        self._state = np.uint64(_MASK)

    def update(self, data) -> "Crc64":
        if isinstance(data, np.ndarray):
            buf = np.ascontiguousarray(data).reshape(-1).view(np.uint8)
        else:
            buf = np.frombuffer(data, dtype=np.uint8)
        if buf.size:
            # numba hands back a Python int; keep it unsigned for the next call
            self._state = np.uint64(_update(self._state, buf, _TABLE))
        return self

    def value(self) -> int:
        return int(self._state) ^ _MASK


def crc64(data) -> int:
    return Crc64().update(data).value()
