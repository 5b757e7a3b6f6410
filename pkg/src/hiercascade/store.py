"""Hierarchical embeddings, sealed galleries, and their binary file format.

File layout (all integers little-endian)::

    magic "HVLP"            4 bytes
    version                 u32   (= 1)
    level count L           u32
    item count              u64
    d_raw                   u32   (0 when not recorded)
    dims                    L x u32
    pools                   L x u32
    ids                     count x u64
    level blocks            for each level: count x dims[l] x f32, row-major
    CRC-64/XZ               u64 over every preceding byte

Vectors are held as float32 in memory too, so that a loaded store is
bitwise identical to the one that was saved.
"""

from __future__ import annotations

import contextlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .crc64 import Crc64
from .errors import (
    BadMagic,
    ChecksumMismatch,
    DimMismatch,
    DuplicateId,
    IoFailure,
    NonFinite,
    ScheduleError,
    StoreFormatError,
    TruncatedFile,
    UnknownId,
    UnsupportedVersion,
)

MAGIC = b"HVLP"
FORMAT_VERSION = 1
_FIXED_HEADER = struct.Struct("<4sIIQI")
STORAGE_DTYPE = np.dtype("<f4")


def header_size(levels: int) -> int:
    return _FIXED_HEADER.size + 8 * levels


@dataclass(frozen=True)
class HierSchedule:
    """Per-level embedding dims and candidate pool sizes.

    A pool of 0 means "keep the entire current pool" and compares as
    larger than any positive pool in the non-increasing check.
    """

    dims: tuple[int, ...]
    pools: tuple[int, ...]

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        pools = tuple(int(p) for p in self.pools)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "pools", pools)
        if len(dims) < 1:
            raise ScheduleError("schedule needs at least one level")
        if len(pools) != len(dims):
            raise ScheduleError(f"{len(dims)} dims but {len(pools)} pools")
        if any(d <= 0 for d in dims):
            raise ScheduleError(f"dims must be positive: {dims}")
        if any(p < 0 for p in pools):
            raise ScheduleError(f"pools must be non-negative: {pools}")
        for a, b in zip(dims, dims[1:]):
            if not a < b:
                raise ScheduleError(f"dims must be strictly increasing: {dims}")
        eff = [p if p > 0 else float("inf") for p in pools]
        for a, b in zip(eff, eff[1:]):
            if a < b:
                raise ScheduleError(f"pools must be non-increasing: {pools}")

    @property
    def levels(self) -> int:
        return len(self.dims)

    @classmethod
    def flat(cls, dim: int) -> "HierSchedule":
        return cls((dim,), (0,))

    def with_pools(self, pools: Sequence[int]) -> "HierSchedule":
        return HierSchedule(self.dims, tuple(pools))


@dataclass(frozen=True)
class HierEmbedding:
    id: int
    levels: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class RawItem:
    id: int
    raw: np.ndarray


def _check_block(block: np.ndarray, ids: np.ndarray, level: int, dim: int) -> None:
    if block.ndim != 2 or block.shape[1] != dim:
        got = block.shape[1] if block.ndim == 2 else block.size
        raise DimMismatch(level, dim, got)
    if block.shape[0] != ids.shape[0]:
        raise StoreFormatError(
            f"level {level} has {block.shape[0]} rows for {ids.shape[0]} ids"
        )
    finite = np.isfinite(block).all(axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise NonFinite(int(ids[bad]), level)


class GalleryStore:
    """Immutable, insertion-ordered collection of hierarchical embeddings.

    ``blocks[l]`` is an ``(n, dims[l])`` float32 array with the level-``l``
    vector of every item, in item order.
    """

    __slots__ = ("schedule", "ids", "blocks", "d_raw", "_index")

    def __init__(
        self,
        schedule: HierSchedule,
        ids: np.ndarray,
        blocks: Sequence[np.ndarray],
        d_raw: int = 0,
    ):
        ids = np.asarray(ids)
        if ids.ndim != 1:
            raise StoreFormatError("ids must be one-dimensional")
        if ids.size and (ids.dtype.kind not in "iu" or ids.min() < 0):
            raise StoreFormatError("ids must be non-negative integers")
        ids = np.array(ids, dtype=np.int64)
        if len(blocks) != schedule.levels:
            raise StoreFormatError(
                f"{len(blocks)} blocks for a {schedule.levels}-level schedule"
            )
        index: dict[int, int] = {}
        for pos, i in enumerate(ids.tolist()):
            if i in index:
                raise DuplicateId(i)
            index[i] = pos
        sealed = []
        for level, (block, dim) in enumerate(zip(blocks, schedule.dims), start=1):
            given = np.asarray(block)
            if given.ndim == 1 and given.size == 0:
                given = given.reshape(0, dim)
            with np.errstate(over="ignore"):
                block = np.ascontiguousarray(given, dtype=np.float32)
            if block is given and block.flags.writeable:
                block = block.copy()
            _check_block(block, ids, level, dim)
            block.flags.writeable = False
            sealed.append(block)
        ids.flags.writeable = False
        object.__setattr__(self, "schedule", schedule)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "blocks", tuple(sealed))
        object.__setattr__(self, "d_raw", int(d_raw))
        object.__setattr__(self, "_index", index)

    def __setattr__(self, name, value):
        raise AttributeError("GalleryStore is immutable")

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def __iter__(self) -> Iterator[HierEmbedding]:
        for pos in range(len(self)):
            yield self.item_at(pos)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GalleryStore):
            return NotImplemented
        return (
            self.schedule == other.schedule
            and self.d_raw == other.d_raw
            and np.array_equal(self.ids, other.ids)
            and all(
                a.shape == b.shape and np.array_equal(a.view(np.uint32), b.view(np.uint32))
                for a, b in zip(self.blocks, other.blocks)
            )
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return (
            f"GalleryStore(n={len(self)}, dims={self.schedule.dims}, "
            f"pools={self.schedule.pools}, d_raw={self.d_raw})"
        )

    @property
    def id_index(self) -> dict[int, int]:
        return dict(self._index)

    def position(self, item_id: int) -> int:
        try:
            return self._index[int(item_id)]
        except KeyError:
            raise UnknownId(int(item_id)) from None

    def positions(self, item_ids: Iterable[int]) -> np.ndarray:
        return np.fromiter((self.position(i) for i in item_ids), dtype=np.int64)

    def item_at(self, pos: int) -> HierEmbedding:
        return HierEmbedding(int(self.ids[pos]), tuple(b[pos] for b in self.blocks))

    def item(self, item_id: int) -> HierEmbedding:
        return self.item_at(self.position(item_id))

    def level_nbytes(self, level: int) -> int:
        return self.blocks[level - 1].nbytes

    def file_size(self) -> int:
        n = len(self)
        return (
            header_size(self.schedule.levels)
            + 8 * n
            + sum(b.nbytes for b in self.blocks)
            + 8
        )


def build_store(
    schedule: HierSchedule, items: Iterable[HierEmbedding], d_raw: int = 0
) -> GalleryStore:
    """Seal ``items`` into a store, validating every vector against ``schedule``."""
    items = list(items)
    seen: set[int] = set()
    blocks = [np.empty((len(items), d), dtype=np.float32) for d in schedule.dims]
    for pos, item in enumerate(items):
        if item.id in seen:
            raise DuplicateId(item.id)
        seen.add(item.id)
        if len(item.levels) != schedule.levels:
            raise DimMismatch(len(item.levels), schedule.levels, len(item.levels))
        for level, (vec, dim) in enumerate(zip(item.levels, schedule.dims), start=1):
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (dim,):
                raise DimMismatch(level, dim, vec.size)
            if not np.isfinite(vec).all():
                raise NonFinite(item.id, level)
            with np.errstate(over="ignore"):
                blocks[level - 1][pos] = vec
    ids = np.array([it.id for it in items], dtype=np.int64)
    if ids.size and ids.min() < 0:
        raise StoreFormatError("ids must be non-negative")
    return GalleryStore(schedule, ids, blocks, d_raw=d_raw)


def raw_store(items: Sequence[RawItem] | np.ndarray, ids=None) -> GalleryStore:
    """Pack raw feature vectors as a one-level store with d_raw recorded."""
    if isinstance(items, np.ndarray):
        arr = items
        ids = np.arange(arr.shape[0]) if ids is None else np.asarray(ids)
    else:
        arr = np.stack([np.asarray(it.raw, dtype=np.float64) for it in items])
        ids = np.array([it.id for it in items], dtype=np.int64)
    d_raw = arr.shape[1]
    return GalleryStore(HierSchedule.flat(d_raw), ids, [arr], d_raw=d_raw)


def _header_bytes(store: GalleryStore) -> bytes:
    sch = store.schedule
    return _FIXED_HEADER.pack(
        MAGIC, FORMAT_VERSION, sch.levels, len(store), store.d_raw
    ) + struct.pack(f"<{sch.levels}I{sch.levels}I", *sch.dims, *sch.pools)


def save_store(store: GalleryStore, path: str | Path) -> int:
    """Write ``store`` to ``path``; returns the number of bytes written."""
    crc = Crc64()
    written = 0
    chunks = [_header_bytes(store), store.ids.astype("<u8").tobytes()]
    try:
        with open(path, "wb") as fh:
            for chunk in chunks:
                fh.write(chunk)
                crc.update(chunk)
                written += len(chunk)
            for block in store.blocks:
                data = np.ascontiguousarray(block, dtype=STORAGE_DTYPE)
                fh.write(data.data)
                crc.update(data)
                written += data.nbytes
            fh.write(struct.pack("<Q", crc.value()))
            written += 8
    except OSError as exc:
        with contextlib.suppress(OSError):
            if Path(path).is_file():
                Path(path).unlink()
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return written


def load_store(path: str | Path) -> GalleryStore:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return store_from_bytes(data)


def store_from_bytes(data: bytes) -> GalleryStore:
    buf = memoryview(data)
    if len(buf) < 4:
        raise TruncatedFile("file shorter than the magic")
    if bytes(buf[:4]) != MAGIC:
        raise BadMagic(f"bad magic {bytes(buf[:4])!r}")
    if len(buf) < _FIXED_HEADER.size:
        raise TruncatedFile("file shorter than the fixed header")
    _, version, levels, count, d_raw = _FIXED_HEADER.unpack_from(buf, 0)
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(version)
    if levels < 1:
        raise StoreFormatError("level count must be at least 1")
    hsize = header_size(levels)
    if len(buf) < hsize:
        raise TruncatedFile("file shorter than its header")
    tail = struct.unpack_from(f"<{levels}I{levels}I", buf, _FIXED_HEADER.size)
    dims, pools = tail[:levels], tail[levels:]
    schedule = HierSchedule(dims, pools)
    expected = hsize + 8 * count + 4 * count * sum(dims) + 8
    if len(buf) < expected:
        raise TruncatedFile(f"expected {expected} bytes, found {len(buf)}")
    if len(buf) > expected:
        raise StoreFormatError(f"{len(buf) - expected} trailing bytes")
    (stored_crc,) = struct.unpack_from("<Q", buf, expected - 8)
    actual = Crc64().update(buf[: expected - 8]).value()
    if stored_crc != actual:
        raise ChecksumMismatch(f"stored {stored_crc:#018x}, computed {actual:#018x}")

    off = hsize
    ids = np.frombuffer(buf, dtype="<u8", count=count, offset=off)
    off += 8 * count
    if count and ids.max() > np.iinfo(np.int64).max:
        raise StoreFormatError("id exceeds the signed 64-bit range")
    blocks = []
    for dim in dims:
        n = count * dim
        block = np.frombuffer(buf, dtype=STORAGE_DTYPE, count=n, offset=off)
        block = block.reshape(count, dim).astype(np.float32)
        block.flags.writeable = False
        blocks.append(block)
        off += 4 * n
    return GalleryStore(schedule, ids.astype(np.int64), blocks, d_raw=d_raw)
