"""Toy trainer for the per-level projections, corpus encoding, and the
packing of trained parameters into store files."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateBatch,
    DimMismatch,
    DivergenceDetected,
    SchemaError,
    UsageError,
)
from .objectives import (
    EolProjection,
    PairBatch,
    VlmScorer,
    hrl_loss,
    project_eol,
    vlm_loss,
    vlm_pairs,
)
from .store import GalleryStore, HierSchedule

log = logging.getLogger(__name__)

Projections = list[tuple[EolProjection, EolProjection]]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    vlm: bool = False
    vlm_lr: float = 1e-3
    vlm_epochs: int = 20

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise UsageError("batch size must be at least 2 for in-batch negatives")
        if self.lr < 0 or self.vlm_lr < 0:
            raise UsageError("learning rates must be non-negative")
        if self.epochs < 0 or self.vlm_epochs < 0:
            raise UsageError("epoch counts must be non-negative")


@dataclass
class TrainResult:
    projections: Projections
    history: list[float]
    scorer: VlmScorer | None = None
    vlm_history: list[float] = field(default_factory=list)

    @property
    def query_projections(self) -> list[EolProjection]:
        return [q for q, _ in self.projections]

    @property
    def gallery_projections(self) -> list[EolProjection]:
        return [g for _, g in self.projections]


def init_projections(schedule: HierSchedule, d_raw: int, rng: np.random.Generator) -> Projections:
    out = []
    for level, dim in enumerate(schedule.dims, start=1):
        pair = tuple(
            EolProjection(level, rng.standard_normal((dim, d_raw)) / np.sqrt(d_raw), np.zeros(dim))
            for _ in range(2)
        )
        out.append(pair)
    return out


def _batches(perm: np.ndarray, size: int) -> list[np.ndarray]:
    parts = [perm[i : i + size] for i in range(0, perm.size, size)]
    if len(parts) > 1 and parts[-1].size < 2:
        tail = parts.pop()
        parts[-1] = np.concatenate([parts[-1], tail])
    return parts


def _step(p: EolProjection, grad, lr: float) -> EolProjection:
    w = p.weight - lr * grad.weight
    b = p.bias - lr * grad.bias
    if not (np.isfinite(w).all() and np.isfinite(b).all()):
        raise DivergenceDetected(f"level {p.level} parameters became non-finite")
    return EolProjection(p.level, w, b)


def train_eol(
    queries: np.ndarray,
    galleries: np.ndarray,
    cfg: TrainConfig,
    schedule: HierSchedule,
) -> TrainResult:
    """Fit query- and gallery-side projections for every level by gradient
    descent on the summed per-level contrastive loss.

    Each epoch visits the pairs in a fresh seeded order, one step per
    batch. The recorded loss is the mean batch loss seen during the epoch,
    evaluated before each step. With ``batch_size >= len(queries)`` this
    is deterministic full-batch descent, and the history is the exact
    objective at each epoch's starting point.
    """
    queries = np.asarray(queries, dtype=np.float64)
    galleries = np.asarray(galleries, dtype=np.float64)
    n, d_raw = queries.shape
    if galleries.shape != queries.shape:
        raise SchemaError("query and gallery raw arrays differ in shape")
    if n < 2:
        raise DegenerateBatch("need at least two pairs")
    if n < cfg.batch_size:
        raise UsageError(f"dataset of {n} pairs is smaller than one batch ({cfg.batch_size})")

    rng = np.random.default_rng(cfg.seed)
    projections = init_projections(schedule, d_raw, rng)
    history: list[float] = []
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            perm = rng.permutation(n) if cfg.batch_size < n else np.arange(n)
            total = 0.0
            parts = _batches(perm, cfg.batch_size)
            for idx in parts:
                out = hrl_loss(PairBatch(queries[idx], galleries[idx]), projections)
                if not np.isfinite(out.loss):
                    raise DivergenceDetected(f"loss became non-finite in epoch {epoch}")
                total += out.loss
                projections = [
                    (_step(q, gq, cfg.lr), _step(g, gg, cfg.lr))
                    for (q, g), (gq, gg) in zip(projections, out.grads)
                ]
            history.append(total / len(parts))
            log.debug("epoch %d loss %.6f", epoch, history[-1])

    result = TrainResult(projections, history)
    if cfg.vlm:
        result.scorer, result.vlm_history = train_scorer(
            project_eol(projections[-1][0], queries),
            project_eol(projections[-1][1], galleries),
            cfg,
            rng,
        )
    return result


def train_scorer(
    q_emb: np.ndarray, g_emb: np.ndarray, cfg: TrainConfig, rng: np.random.Generator
) -> tuple[VlmScorer, list[float]]:
    """Fit the matching head on final-level embeddings.

    Each positive pair is contrasted with one shifted in-batch negative.
    """
    n, dim = q_emb.shape
    w = np.zeros((dim, dim))
    b = 0.0
    history = []
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.vlm_epochs):
            perm = rng.permutation(n) if cfg.batch_size < n else np.arange(n)
            total = 0.0
            parts = _batches(perm, cfg.batch_size)
            for idx in parts:
                q, g, y = vlm_pairs(q_emb[idx], g_emb[idx])
                out = vlm_loss(VlmScorer(w, b), q, g, y)
                if not np.isfinite(out.loss):
                    raise DivergenceDetected(f"matching loss non-finite in epoch {epoch}")
                total += out.loss
                w = w - cfg.vlm_lr * out.weight_grad
                b = b - cfg.vlm_lr * out.bias_grad
                if not (np.isfinite(w).all() and np.isfinite(b)):
                    raise DivergenceDetected("matching head parameters became non-finite")
            history.append(total / len(parts))
    return VlmScorer(w, b), history


def encode_corpus(
    projections: Sequence[EolProjection],
    raw: np.ndarray,
    schedule: HierSchedule,
    ids: np.ndarray | None = None,
    normalize: bool = False,
) -> GalleryStore:
    """Project every raw item through each level's map into a sealed store."""
    raw = np.asarray(raw, dtype=np.float64)
    if len(projections) != schedule.levels:
        raise DimMismatch(0, schedule.levels, len(projections))
    blocks = []
    for level, (p, dim) in enumerate(zip(projections, schedule.dims), start=1):
        if p.out_dim != dim:
            raise DimMismatch(level, dim, p.out_dim)
        block = project_eol(p, raw)
        if normalize:
            norms = np.linalg.norm(block, axis=1, keepdims=True)
            block = block / np.where(norms == 0, 1.0, norms)
        block = block.astype(np.float32)
        block.flags.writeable = False  # lets the store adopt it without a copy
        blocks.append(block)
    ids = np.arange(raw.shape[0]) if ids is None else np.asarray(ids)
    return GalleryStore(schedule, ids, blocks)


# -- parameter files --------------------------------------------------------
#
# A side's projections are stored as a store whose schedule dims are the
# per-level output dims. Item j < d_in holds column j of every level's
# weight; item d_in holds the biases.


def projections_to_store(projections: Sequence[EolProjection], schedule: HierSchedule) -> GalleryStore:
    d_in = projections[0].in_dim
    blocks = [np.vstack([p.weight.T, p.bias[None, :]]) for p in projections]
    return GalleryStore(schedule, np.arange(d_in + 1), blocks, d_raw=d_in)


def projections_from_store(store: GalleryStore) -> list[EolProjection]:
    d_in = store.d_raw
    if len(store) != d_in + 1:
        raise SchemaError(f"projection file has {len(store)} rows for d_in={d_in}")
    out = []
    for level, block in enumerate(store.blocks, start=1):
        b64 = block.astype(np.float64)
        out.append(EolProjection(level, b64[:d_in].T.copy(), b64[d_in].copy()))
    return out


def scorer_to_store(scorer: VlmScorer) -> GalleryStore:
    dim = scorer.dim
    bias_row = np.zeros((1, dim))
    bias_row[0, 0] = scorer.bias
    return GalleryStore(
        HierSchedule.flat(dim), np.arange(dim + 1), [np.vstack([scorer.weight, bias_row])], d_raw=dim
    )


def scorer_from_store(store: GalleryStore) -> VlmScorer:
    dim = store.schedule.dims[0]
    if store.schedule.levels != 1 or len(store) != dim + 1:
        raise SchemaError("not a matching-head file")
    block = store.blocks[0].astype(np.float64)
    return VlmScorer(block[:dim].copy(), float(block[dim, 0]))
