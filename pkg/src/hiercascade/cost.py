"""Analytic retrieval-time model for flat vs. hierarchical retrieval, and a
small discrete-event simulator for the overlapped encode/search pipeline.

Flat retrieval encodes the query through every layer, then scores all
``N`` candidates at the full dimension::

    layers * t_e + N * d_L * unit

Hierarchical retrieval splits the encoder into ``L`` chunks. Searching at
level ``l`` overlaps with encoding chunk ``l + 1``::

    c + sum_{l < L} max(c, N_l * d_l * unit) + N_L * d_L * unit,
    c = chunk_layers * t_e

where ``N_l`` is the number of candidates scored at level ``l``.
Integer inputs give exact integer results.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Real
from typing import NamedTuple, Sequence

from .errors import UsageError


@dataclass(frozen=True)
class CostParams:
    t_e: Real
    encoder_layers: int
    n_candidates: Real
    dims: tuple[int, ...]
    counts: tuple[Real, ...]
    unit_mul: Real = 1
    chunk_layers: int | None = None

    def __post_init__(self) -> None:
        dims = tuple(self.dims)
        counts = tuple(self.counts)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "counts", counts)
        if not dims:
            raise UsageError("need at least one level")
        if len(counts) != len(dims):
            raise UsageError(f"{len(dims)} dims but {len(counts)} counts")
        if any(d <= 0 for d in dims):
            raise UsageError("dims must be positive")
        if any(c < 0 for c in counts) or self.n_candidates < 0:
            raise UsageError("candidate counts must be non-negative")
        if self.t_e < 0 or self.unit_mul < 0:
            raise UsageError("times must be non-negative")
        if self.encoder_layers < 1:
            raise UsageError("encoder needs at least one layer")
        if self.chunk_layers is None:
            object.__setattr__(self, "chunk_layers", self.encoder_layers // len(dims))
        chunk = self.chunk_layers
        if chunk < 1:
            raise UsageError(
                f"{self.encoder_layers} layers cannot host {len(dims)} early outputs"
            )
        if chunk * len(dims) > self.encoder_layers + chunk:
            raise UsageError(
                f"{len(dims)} chunks of {chunk} layers overrun {self.encoder_layers} layers"
            )

    @property
    def levels(self) -> int:
        return len(self.dims)

    @property
    def chunk_time(self) -> Real:
        return self.chunk_layers * self.t_e

    def search_time(self, level: int) -> Real:
        return self.counts[level - 1] * self.dims[level - 1] * self.unit_mul


class StageCost(NamedTuple):
    window: int
    encode: Real
    search: Real
    dominant: str


@dataclass(frozen=True)
class CostReport:
    traditional: Real
    hierarchical: Real
    stages: tuple[StageCost, ...] = field(default=())

    @property
    def speedup(self) -> float:
        if self.hierarchical == 0:
            return float("inf") if self.traditional else 1.0
        return float(Fraction(self.traditional) / Fraction(self.hierarchical))

    def to_text(self) -> str:
        lines = [
            f"traditional = {_fmt(self.traditional)}",
            f"hierarchical = {_fmt(self.hierarchical)}",
            f"speedup = {self.speedup:.3f}",
            f"speedup_exact = {self.speedup!r}",
        ]
        for st in self.stages:
            lines.append(f"window_{st.window}_encode = {_fmt(st.encode)}")
            lines.append(f"window_{st.window}_search = {_fmt(st.search)}")
            lines.append(f"window_{st.window}_dominant = {st.dominant}")
        lines.append(
            "note = the exact ratio is shown; rounding the two totals to one "
            "significant figure first can suggest a larger speedup"
        )
        return "\n".join(lines) + "\n"


def _fmt(x: Real) -> str:
    if isinstance(x, float) and x.is_integer() and abs(x) < 2**63:
        return str(int(x))
    return str(x)


def traditional_cost(p: CostParams) -> Real:
    return p.encoder_layers * p.t_e + p.n_candidates * p.dims[-1] * p.unit_mul


def _dominant(encode: Real, search: Real) -> str:
    if encode > search:
        return "encode"
    if search > encode:
        return "search"
    return "tie"


def hierarchical_cost(p: CostParams) -> CostReport:
    c = p.chunk_time
    stages = [StageCost(0, c, 0, "encode")]
    total = c
    for level in range(1, p.levels):
        s = p.search_time(level)
        total += max(c, s)
        stages.append(StageCost(level, c, s, _dominant(c, s)))
    last = p.search_time(p.levels)
    total += last
    stages.append(StageCost(p.levels, 0, last, "search"))
    return CostReport(traditional_cost(p), total, tuple(stages))


# -- pipeline simulation ----------------------------------------------------


class Task(NamedTuple):
    name: str
    duration: Real
    deps: tuple[str, ...]


class ScheduledTask(NamedTuple):
    name: str
    start: Real
    end: Real


class PipelineResult(NamedTuple):
    makespan: Real
    schedule: list[ScheduledTask]
    critical_path: list[str]


def pipeline_tasks(
    encode: Sequence[Real], search: Sequence[Real]
) -> list[Task]:
    """Dependency graph of the overlapped pipeline.

    ``encode[l]`` and ``search[l]`` are the durations of encoder chunk
    ``l + 1`` and of the level-``l + 1`` scan. A scan needs its own chunk's
    output and the previous level's survivors. Encoder chunk ``l + 1`` and
    scan ``l`` form one window; the next window opens when both finish.
    """
    if len(encode) != len(search) or not encode:
        raise UsageError("need one encode and one search duration per level")
    if any(d < 0 for d in list(encode) + list(search)):
        raise UsageError("stage durations must be non-negative")
    tasks = []
    for i in range(len(encode)):
        deps: tuple[str, ...] = ()
        if i > 0:
            deps = (f"encode{i}",) + ((f"search{i - 1}",) if i > 1 else ())
        tasks.append(Task(f"encode{i + 1}", encode[i], deps))
        sdeps = (f"encode{i + 1}",) + ((f"search{i}",) if i > 0 else ())
        tasks.append(Task(f"search{i + 1}", search[i], sdeps))
    return tasks


def simulate(tasks: Sequence[Task]) -> PipelineResult:
    """Event-driven schedule: each task starts as soon as its deps finish.

    The critical path follows, from the last task to finish, the
    dependency that finished latest (first-listed dependency on ties).
    """
    by_name = {t.name: t for t in tasks}
    order_of = {t.name: i for i, t in enumerate(tasks)}
    waiting = {t.name: len(t.deps) for t in tasks}
    dependents: dict[str, list[str]] = {t.name: [] for t in tasks}
    for t in tasks:
        for d in t.deps:
            if d not in by_name:
                raise UsageError(f"{t.name} depends on unknown task {d}")
            dependents[d].append(t.name)

    events = [(t.duration, order_of[t.name], t.name, 0) for t in tasks if not t.deps]
    heapq.heapify(events)
    done: dict[str, ScheduledTask] = {}
    while events:
        end, _, name, start = heapq.heappop(events)
        done[name] = ScheduledTask(name, start, end)
        for nxt in dependents[name]:
            waiting[nxt] -= 1
            if waiting[nxt] == 0:
                begin = max(done[d].end for d in by_name[nxt].deps)
                heapq.heappush(
                    events, (begin + by_name[nxt].duration, order_of[nxt], nxt, begin)
                )
    if len(done) != len(tasks):
        raise UsageError("task graph has a cycle")

    last = max(done.values(), key=lambda s: (s.end, order_of[s.name]))
    path = [last.name]
    while by_name[path[-1]].deps:
        deps = by_name[path[-1]].deps
        latest = max(done[d].end for d in deps)
        path.append(next(d for d in deps if done[d].end == latest))
    schedule = sorted(done.values(), key=lambda s: (s.start, order_of[s.name]))
    return PipelineResult(last.end, schedule, path[::-1])


def analytic_durations(p: CostParams) -> tuple[list[Real], list[Real]]:
    encode = [p.chunk_time] * p.levels
    search = [p.search_time(level) for level in range(1, p.levels + 1)]
    return encode, search


def simulate_pipeline(
    p: CostParams,
    search: Sequence[Real] | None = None,
    encode: Sequence[Real] | None = None,
) -> PipelineResult:
    """Simulate the overlapped pipeline.

    Durations default to the analytic ones from ``p``; pass measured
    ``search`` (and optionally ``encode``) durations to replay a real run.
    """
    a_enc, a_search = analytic_durations(p)
    return simulate(
        pipeline_tasks(
            list(encode) if encode is not None else a_enc,
            list(search) if search is not None else a_search,
        )
    )


def measured_search_ns(traces) -> list[float]:
    """Mean per-level scan time in nanoseconds over a batch of cascade traces."""
    traces = list(traces)
    if not traces:
        raise UsageError("need at least one trace")
    levels = len(traces[0].levels)
    return [
        sum(t.levels[i].elapsed_ns for t in traces) / len(traces) for i in range(levels)
    ]
