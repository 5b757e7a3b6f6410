"""Training objectives: per-level in-batch contrastive loss, its sum over
levels, and the bilinear matching loss, each with closed-form gradients.

Scores are raw dot products with no normalization or temperature. All
arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import (
    DegenerateBatch,
    DimMismatch,
    EmptyInput,
    IndexOutOfRange,
    NonFiniteLoss,
    SchemaError,
)


@dataclass(frozen=True)
class EolProjection:
    """Affine early-output map ``raw -> weight @ raw + bias`` for one level and side."""

    level: int
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 2:
            raise SchemaError("projection weight must be a matrix")
        if b.shape != (w.shape[0],):
            raise DimMismatch(self.level, w.shape[0], b.size)
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise SchemaError(f"non-finite projection parameters at level {self.level}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def params(self) -> np.ndarray:
        return np.concatenate([self.weight.ravel(), self.bias])

    def with_params(self, flat: np.ndarray) -> "EolProjection":
        k = self.weight.size
        return EolProjection(
            self.level, flat[:k].reshape(self.weight.shape), flat[k:].copy()
        )


class ProjectionGrad(NamedTuple):
    weight: np.ndarray
    bias: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weight.ravel(), self.bias])


@dataclass(frozen=True)
class PairBatch:
    """``n`` aligned raw pairs; query ``i`` matches gallery ``i``."""

    queries: np.ndarray
    galleries: np.ndarray

    def __post_init__(self) -> None:
        q = np.atleast_2d(np.asarray(self.queries, dtype=np.float64))
        g = np.atleast_2d(np.asarray(self.galleries, dtype=np.float64))
        if q.shape[0] != g.shape[0]:
            raise SchemaError(f"{q.shape[0]} queries but {g.shape[0]} galleries")
        object.__setattr__(self, "queries", q)
        object.__setattr__(self, "galleries", g)

    @property
    def n(self) -> int:
        return self.queries.shape[0]


@dataclass(frozen=True)
class VlmScorer:
    """Bilinear matching head: ``p = sigmoid(q @ weight @ g + bias)``."""

    weight: np.ndarray
    bias: float = 0.0

    def __post_init__(self) -> None:
        w = np.asarray(self.weight, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise SchemaError("scorer weight must be square")
        if not (np.isfinite(w).all() and np.isfinite(self.bias)):
            raise SchemaError("non-finite scorer parameters")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def dim(self) -> int:
        return self.weight.shape[0]


class LevelLoss(NamedTuple):
    loss: float
    query_grad: ProjectionGrad
    gallery_grad: ProjectionGrad


class HrlLoss(NamedTuple):
    loss: float
    level_losses: list[float]
    grads: list[tuple[ProjectionGrad, ProjectionGrad]]


class VlmLoss(NamedTuple):
    loss: float
    weight_grad: np.ndarray
    bias_grad: float


# -- forward pieces ---------------------------------------------------------


def project_eol(p: EolProjection, raw: np.ndarray) -> np.ndarray:
    """Apply the projection to one raw vector or to each row of a matrix."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != p.in_dim:
        raise DimMismatch(p.level, p.in_dim, raw.shape[-1])
    return raw @ p.weight.T + p.bias


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimMismatch(0, a.size, b.size)
    return float(a @ b)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def in_batch_softmax(sims: Sequence[float], target_index: int) -> float:
    """Probability mass that a softmax over ``sims`` puts on ``target_index``."""
    sims = np.asarray(sims, dtype=np.float64)
    if sims.ndim != 1 or sims.size == 0:
        raise EmptyInput("need at least one similarity")
    if not 0 <= target_index < sims.size:
        raise IndexOutOfRange(f"target {target_index} outside 0..{sims.size - 1}")
    return float(softmax(sims)[target_index])


def contrastive_from_sims(sims: np.ndarray) -> tuple[float, np.ndarray]:
    """Symmetric in-batch cross-entropy for an ``n x n`` score matrix.

    Row ``i`` is query ``i`` against every gallery item; the diagonal is
    the positive. Returns the loss and its gradient with respect to
    ``sims``.
    """
    sims = np.asarray(sims, dtype=np.float64)
    n = sims.shape[0]
    if sims.ndim != 2 or sims.shape[1] != n:
        raise SchemaError("similarity matrix must be square")
    if n < 2:
        raise DegenerateBatch(f"in-batch loss needs n >= 2, got {n}")
    diag = np.arange(n)
    lp_q2g = log_softmax(sims, axis=1)
    lp_g2q = log_softmax(sims, axis=0)
    loss = -0.5 * (lp_q2g[diag, diag].sum() + lp_g2q[diag, diag].sum()) / n
    grad = np.exp(lp_q2g) + np.exp(lp_g2q)
    grad[diag, diag] -= 2.0
    grad *= 0.5 / n
    return float(loss), grad


def retrieval_loss_level(
    batch: PairBatch, query_proj: EolProjection, gallery_proj: EolProjection
) -> LevelLoss:
    if batch.n < 2:
        raise DegenerateBatch(f"in-batch loss needs n >= 2, got {batch.n}")
    if query_proj.out_dim != gallery_proj.out_dim:
        raise DimMismatch(query_proj.level, query_proj.out_dim, gallery_proj.out_dim)
    xq, xg = batch.queries, batch.galleries
    hq = project_eol(query_proj, xq)
    hg = project_eol(gallery_proj, xg)
    loss, d_sims = contrastive_from_sims(hq @ hg.T)
    d_hq = d_sims @ hg
    d_hg = d_sims.T @ hq
    return LevelLoss(
        loss,
        ProjectionGrad(d_hq.T @ xq, d_hq.sum(axis=0)),
        ProjectionGrad(d_hg.T @ xg, d_hg.sum(axis=0)),
    )


def hrl_loss(
    batch: PairBatch, projections: Sequence[tuple[EolProjection, EolProjection]]
) -> HrlLoss:
    """Unweighted sum of the per-level retrieval losses."""
    if not projections:
        raise EmptyInput("need projections for at least one level")
    parts = [retrieval_loss_level(batch, q, g) for q, g in projections]
    losses = [p.loss for p in parts]
    return HrlLoss(
        float(sum(losses)),
        losses,
        [(p.query_grad, p.gallery_grad) for p in parts],
    )


# -- matching head ----------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def vlm_logit(scorer: VlmScorer, q: np.ndarray, g: np.ndarray) -> np.ndarray | float:
    q = np.asarray(q, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if q.shape[-1] != scorer.dim or g.shape[-1] != scorer.dim:
        raise DimMismatch(0, scorer.dim, q.shape[-1] if q.shape[-1] != scorer.dim else g.shape[-1])
    out = np.einsum("...i,ij,...j->...", q, scorer.weight, g) + scorer.bias
    return float(out) if out.ndim == 0 else out


def vlm_score(scorer: VlmScorer, q: np.ndarray, g: np.ndarray) -> np.ndarray | float:
    s = _sigmoid(vlm_logit(scorer, q, g))
    return float(s) if s.ndim == 0 else s


def vlm_loss(
    scorer: VlmScorer, queries: np.ndarray, galleries: np.ndarray, labels: np.ndarray
) -> VlmLoss:
    """Mean binary cross-entropy of the matching head, evaluated from logits."""
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    g = np.atleast_2d(np.asarray(galleries, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels, dtype=np.float64))
    m = y.shape[0]
    if m == 0:
        raise EmptyInput("vlm_loss needs at least one labelled pair")
    if q.shape[0] != m or g.shape[0] != m:
        raise SchemaError("queries, galleries and labels differ in length")
    x = np.atleast_1d(vlm_logit(scorer, q, g))
    # softplus(x) - y*x == -[y log s(x) + (1-y) log(1 - s(x))]
    loss = float(np.mean(np.logaddexp(0.0, x) - y * x))
    r = (_sigmoid(x) - y) / m
    return VlmLoss(loss, q.T @ (r[:, None] * g), float(r.sum()))


def vlm_pairs(queries: np.ndarray, galleries: np.ndarray):
    """Positives ``(i, i)`` plus one shifted negative ``(i, (i+1) mod n)`` each."""
    q = np.asarray(queries, dtype=np.float64)
    g = np.asarray(galleries, dtype=np.float64)
    n = q.shape[0]
    if n < 2:
        raise DegenerateBatch("matching pairs need n >= 2")
    neg = (np.arange(n) + 1) % n
    return (
        np.concatenate([q, q]),
        np.concatenate([g, g[neg]]),
        np.concatenate([np.ones(n), np.zeros(n)]),
    )


# -- gradient oracle --------------------------------------------------------


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of ``f`` at ``x``, one coordinate at a time."""
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = float(f(x))
        flat[i] = orig - step
        down = float(f(x))
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NonFiniteLoss(f"non-finite loss while perturbing coordinate {i}")
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def relative_error(a, b) -> np.ndarray:
    """Elementwise ``|a - b| / max(1, |a|, |b|)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
