"""Recall@K and average recall."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyInput, MissingGroundTruth, UsageError

DEFAULT_KS = (1, 5, 10)


def recall_at_k(
    ranked: Sequence[Sequence[int]], truth: Sequence[int | None], k: int
) -> float:
    """Fraction of queries whose ground-truth id is among their first ``k`` results."""
    if k < 1:
        raise UsageError(f"k must be at least 1, got {k}")
    if len(ranked) != len(truth):
        raise MissingGroundTruth(f"{len(ranked)} rankings but {len(truth)} truths")
    if not ranked:
        raise EmptyInput("no queries to evaluate")
    hits = 0
    for ids, gt in zip(ranked, truth):
        if gt is None:
            raise MissingGroundTruth("query without a ground-truth id")
        if gt in list(ids[:k]):
            hits += 1
    return hits / len(ranked)


def average_recall(values: Sequence[float]) -> float:
    values = [float(v) for v in values]
    if not values:
        raise EmptyInput("average recall needs at least one value")
    return float(np.mean(values))


@dataclass(frozen=True)
class EvalReport:
    """Recall per direction. ``q2g`` maps K to recall for query-to-gallery;
    ``g2q`` likewise for gallery-to-query and may be empty."""

    ks: tuple[int, ...]
    q2g: Mapping[int, float]
    g2q: Mapping[int, float] = field(default_factory=dict)

    @property
    def ar(self) -> float:
        return average_recall(list(self.q2g.values()) + list(self.g2q.values()))

    def fields(self) -> dict[str, float]:
        out = {f"q2g_R@{k}": self.q2g[k] for k in self.ks}
        out.update({f"g2q_R@{k}": self.g2q[k] for k in self.ks if k in self.g2q})
        out["AR"] = self.ar
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in self.fields().items())

    def to_csv(self) -> str:
        f = self.fields()
        return ",".join(f) + "\n" + ",".join(repr(v) for v in f.values()) + "\n"


def evaluate(
    q2g_ranked: Sequence[Sequence[int]],
    q2g_truth: Sequence[int],
    ks: Sequence[int] = DEFAULT_KS,
    g2q_ranked: Sequence[Sequence[int]] | None = None,
    g2q_truth: Sequence[int] | None = None,
) -> EvalReport:
    ks = tuple(sorted(set(int(k) for k in ks)))
    q2g = {k: recall_at_k(q2g_ranked, q2g_truth, k) for k in ks}
    g2q = {}
    if g2q_ranked is not None:
        if g2q_truth is None:
            raise MissingGroundTruth("reverse-direction rankings need ground truth")
        g2q = {k: recall_at_k(g2q_ranked, g2q_truth, k) for k in ks}
    return EvalReport(ks, q2g, g2q)
