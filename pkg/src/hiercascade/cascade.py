"""Coarse-to-fine cascade search over a GalleryStore.

Level 1 scans the whole gallery with the smallest vectors and keeps the
top ``pools[0]``; each later level rescores only the previous survivors
with larger vectors. Everything is an exact scan, ranked by descending
score with ties broken by ascending id.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    DimMismatch,
    EmptyGallery,
    LevelOutOfRange,
    NonFinite,
    ScheduleMismatch,
    UsageError,
)
from .kernels import scan
from .objectives import VlmScorer, _sigmoid, vlm_logit
from .store import GalleryStore, HierSchedule


class Ranking(NamedTuple):
    ids: np.ndarray
    scores: np.ndarray

    def as_pairs(self) -> list[tuple[int, float]]:
        return list(zip(self.ids.tolist(), self.scores.tolist()))


@dataclass(frozen=True)
class CascadeConfig:
    schedule: HierSchedule
    rerank: VlmScorer | None = None
    rerank_depth: int | None = None

    def __post_init__(self) -> None:
        last_pool = self.schedule.pools[-1]
        if self.rerank_depth is not None:
            if self.rerank_depth < 1:
                raise UsageError("rerank depth must be at least 1")
            if last_pool and self.rerank_depth > last_pool:
                raise UsageError(
                    f"rerank depth {self.rerank_depth} exceeds final pool {last_pool}"
                )
        if self.rerank is not None and self.rerank.dim != self.schedule.dims[-1]:
            raise DimMismatch(self.schedule.levels, self.schedule.dims[-1], self.rerank.dim)


@dataclass(frozen=True)
class QueryEmbedding:
    levels: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        vecs = tuple(np.ascontiguousarray(v, dtype=np.float64) for v in self.levels)
        for level, v in enumerate(vecs, start=1):
            if v.ndim != 1:
                raise DimMismatch(level, -1, v.size)
            if not np.isfinite(v).all():
                raise NonFinite(-1, level)
        object.__setattr__(self, "levels", vecs)

    @classmethod
    def from_store(cls, store: GalleryStore, pos: int) -> "QueryEmbedding":
        return cls(tuple(b[pos] for b in store.blocks))


@dataclass(frozen=True)
class LevelTrace:
    level: int
    requested: int
    ids: np.ndarray
    scores: np.ndarray
    elapsed_ns: int = field(compare=False)
    pool_in: int = 0

    @property
    def clamped(self) -> bool:
        return self.requested > self.pool_in


@dataclass(frozen=True)
class CascadeTrace:
    levels: tuple[LevelTrace, ...]
    final_ids: np.ndarray
    final_scores: np.ndarray
    rerank_probs: np.ndarray | None = None
    query_id: int | None = None

    @property
    def elapsed_ns(self) -> int:
        return sum(lv.elapsed_ns for lv in self.levels)

    def same_result(self, other: "CascadeTrace") -> bool:
        """Bitwise equality of everything except timings."""

        def eq(a, b):
            if a is None or b is None:
                return a is b
            return a.shape == b.shape and np.array_equal(
                a.view(np.uint8), b.view(np.uint8)
            )

        return (
            self.query_id == other.query_id
            and len(self.levels) == len(other.levels)
            and all(
                x.level == y.level
                and x.requested == y.requested
                and x.pool_in == y.pool_in
                and eq(x.ids, y.ids)
                and eq(x.scores, y.scores)
                for x, y in zip(self.levels, other.levels)
            )
            and eq(self.final_ids, other.final_ids)
            and eq(self.final_scores, other.final_scores)
            and eq(self.rerank_probs, other.rerank_probs)
        )


class BatchResult(NamedTuple):
    traces: list[CascadeTrace]
    wall_ns: int


def _select(scores: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    """Indices of the top ``k`` entries: score descending, then id ascending."""
    n = scores.shape[0]
    if k >= n:
        return np.lexsort((ids, -scores))
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    kth = np.argpartition(-scores, k - 1)[k - 1]
    # everything tied with the k-th score competes on id
    pool = np.flatnonzero(scores >= scores[kth])
    return pool[np.lexsort((ids[pool], -scores[pool]))][:k]


def _check_level(store: GalleryStore, level: int) -> None:
    if not 1 <= level <= store.schedule.levels:
        raise LevelOutOfRange(f"level {level} outside 1..{store.schedule.levels}")


def _query_vector(q, dim: int, level: int) -> np.ndarray:
    q = np.ascontiguousarray(q, dtype=np.float64)
    if q.shape != (dim,):
        raise DimMismatch(level, dim, q.size)
    if not np.isfinite(q).all():
        raise NonFinite(-1, level)
    return q


def topk_level(
    query: np.ndarray,
    store: GalleryStore,
    level: int,
    candidate_ids: Sequence[int] | None,
    k: int,
) -> Ranking:
    """Exact top-``k`` of ``candidate_ids`` (all items if None) at one level."""
    _check_level(store, level)
    q = _query_vector(query, store.schedule.dims[level - 1], level)
    rows = None if candidate_ids is None else store.positions(candidate_ids)
    scores = scan(store.blocks[level - 1], q, rows)
    rows = np.arange(len(store)) if rows is None else rows
    order = _select(scores, store.ids[rows], k)
    return Ranking(store.ids[rows[order]], scores[order])


def _check_schedule(query: QueryEmbedding, store: GalleryStore, cfg: CascadeConfig):
    dims = store.schedule.dims
    if cfg.schedule.dims != dims:
        raise ScheduleMismatch(f"config dims {cfg.schedule.dims} vs store dims {dims}")
    got = tuple(v.shape[0] for v in query.levels)
    if got != dims:
        raise ScheduleMismatch(f"query dims {got} vs store dims {dims}")


def cascade_search(
    query: QueryEmbedding,
    store: GalleryStore,
    cfg: CascadeConfig,
    query_id: int | None = None,
) -> CascadeTrace:
    _check_schedule(query, store, cfg)
    if len(store) == 0:
        raise EmptyGallery("cannot search an empty gallery")

    rows: np.ndarray | None = None
    traces = []
    scores = np.empty(0)
    for level, (block, q, pool) in enumerate(
        zip(store.blocks, query.levels, cfg.schedule.pools), start=1
    ):
        t0 = time.perf_counter_ns()
        scores = scan(block, q, rows)
        cand = np.arange(len(store)) if rows is None else rows
        n_in = cand.shape[0]
        k = n_in if pool == 0 else min(pool, n_in)
        order = _select(scores, store.ids[cand], k)
        rows, scores = cand[order], scores[order]
        traces.append(
            LevelTrace(
                level=level,
                requested=pool,
                ids=store.ids[rows],
                scores=scores,
                elapsed_ns=time.perf_counter_ns() - t0,
                pool_in=n_in,
            )
        )

    final_ids = store.ids[rows]
    final_scores = scores
    probs = None
    if cfg.rerank is not None:
        depth = len(rows) if cfg.rerank_depth is None else min(cfg.rerank_depth, len(rows))
        head = rows[:depth]
        logits = np.atleast_1d(
            vlm_logit(cfg.rerank, query.levels[-1], store.blocks[-1][head].astype(np.float64))
        )
        # order by logit: same as by probability, but immune to sigmoid saturation
        order = np.lexsort((store.ids[head], -logits))
        reordered = np.concatenate([head[order], rows[depth:]])
        final_scores = np.concatenate([scores[:depth][order], scores[depth:]])
        final_ids = store.ids[reordered]
        probs = _sigmoid(logits[order])
    return CascadeTrace(tuple(traces), final_ids, final_scores, probs, query_id)


def brute_force_search(query: np.ndarray, store: GalleryStore, k: int) -> Ranking:
    """Single-stage full-gallery scan at the finest level."""
    if len(store) == 0:
        raise EmptyGallery("cannot search an empty gallery")
    return topk_level(query, store, store.schedule.levels, None, k)


def batch_search(
    queries: Sequence[QueryEmbedding],
    store: GalleryStore,
    cfg: CascadeConfig,
    workers: int = 1,
    query_ids: Sequence[int] | None = None,
) -> BatchResult:
    """Run ``cascade_search`` for every query; output order matches input order."""
    if workers < 1:
        raise UsageError("worker budget must be at least 1")
    ids = list(query_ids) if query_ids is not None else [None] * len(queries)
    t0 = time.perf_counter_ns()
    if workers == 1 or len(queries) <= 1:
        traces = [cascade_search(q, store, cfg, i) for q, i in zip(queries, ids)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(lambda qi: cascade_search(qi[0], store, cfg, qi[1]), zip(queries, ids)))
    return BatchResult(traces, time.perf_counter_ns() - t0)


def brute_force_batch(
    queries: Sequence[np.ndarray], store: GalleryStore, k: int, workers: int = 1
) -> tuple[list[Ranking], int]:
    if workers < 1:
        raise UsageError("worker budget must be at least 1")
    t0 = time.perf_counter_ns()
    if workers == 1:
        out = [brute_force_search(q, store, k) for q in queries]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(lambda q: brute_force_search(q, store, k), queries))
    return out, time.perf_counter_ns() - t0


def survivors_from_scan_counts(counts: Sequence[int]) -> tuple[int, ...]:
    """Turn per-level scanned-candidate counts into per-level survivor counts.

    ``counts[l]`` is how many candidates level ``l`` scores (0 = all of
    them). Level ``l`` must therefore keep ``counts[l + 1]`` survivors,
    and the last level keeps everything it scored. Level 1 always scans
    the whole gallery, so ``counts[0]`` only has to be 0 or at least
    ``counts[1]``.
    """
    counts = [int(c) for c in counts]
    if not counts:
        raise UsageError("need at least one pool count")
    if any(c < 0 for c in counts):
        raise UsageError(f"pool counts must be non-negative: {counts}")
    return tuple(counts[1:]) + (counts[-1],)
