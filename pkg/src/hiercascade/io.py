"""Text artifacts: ground-truth CSV, JSON-lines traces, key-value reports,
CSV histories and run manifests."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import __version__
from .cascade import CascadeTrace
from .errors import IoFailure, MissingGroundTruth, SchemaError


def _write(path: str | Path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _read(path: str | Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def write_truth(path: str | Path, query_ids: Sequence[int], gallery_ids: Sequence[int]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["query_id", "gallery_id"])
    w.writerows(zip(query_ids, gallery_ids))
    _write(path, buf.getvalue())


def read_truth(path: str | Path) -> dict[int, int]:
    rows = csv.DictReader(io.StringIO(_read(path)))
    if rows.fieldnames != ["query_id", "gallery_id"]:
        raise SchemaError(f"{path}: expected header query_id,gallery_id")
    out: dict[int, int] = {}
    for row in rows:
        out[int(row["query_id"])] = int(row["gallery_id"])
    return out


def invert_truth(truth: Mapping[int, int]) -> dict[int, int]:
    out: dict[int, int] = {}
    for q, g in truth.items():
        out.setdefault(g, q)
    return out


def trace_to_dict(trace: CascadeTrace, levels: bool = True, timings: bool = False) -> dict:
    obj: dict = {"query": trace.query_id}
    if levels:
        obj["levels"] = []
        for lv in trace.levels:
            entry = {
                "level": lv.level,
                "requested": lv.requested,
                "pool_in": lv.pool_in,
                "clamped": lv.clamped,
                "ids": lv.ids.tolist(),
                "scores": lv.scores.tolist(),
            }
            if timings:
                entry["elapsed_ns"] = lv.elapsed_ns
            obj["levels"].append(entry)
    obj["final"] = {"ids": trace.final_ids.tolist(), "scores": trace.final_scores.tolist()}
    if trace.rerank_probs is not None:
        obj["rerank"] = {
            "depth": int(trace.rerank_probs.shape[0]),
            "probs": trace.rerank_probs.tolist(),
        }
    return obj


def format_traces(traces: Iterable[CascadeTrace], levels: bool = True, timings: bool = False) -> str:
    return "".join(
        json.dumps(trace_to_dict(t, levels, timings), separators=(",", ":")) + "\n"
        for t in traces
    )


def read_rankings(path: str | Path) -> dict[int, list[int]]:
    """Final ranked ids per query from a JSON-lines trace file."""
    out: dict[int, list[int]] = {}
    for n, line in enumerate(_read(path).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            out[int(obj["query"])] = [int(i) for i in obj["final"]["ids"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise SchemaError(f"{path}:{n}: not a trace record ({exc})") from exc
    return out


def align(rankings: Mapping[int, list[int]], truth: Mapping[int, int]):
    """Rankings and truths in ascending query-id order."""
    qids = sorted(rankings)
    missing = [q for q in qids if q not in truth]
    if missing:
        raise MissingGroundTruth(f"no ground truth for queries {missing[:5]}")
    return [rankings[q] for q in qids], [truth[q] for q in qids]


def format_kv(fields: Mapping[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in fields.items())


def format_csv_row(fields: Mapping[str, object]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(fields))
    w.writerow(list(fields.values()))
    return buf.getvalue()


def format_history(history: Sequence[float]) -> str:
    return "epoch,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(history, start=1))


def write_text(path: str | Path, text: str) -> None:
    _write(path, text)


def write_manifest(
    path: str | Path,
    command: str,
    config: Mapping[str, object],
    seed: int | None,
    artifacts: Sequence[str | Path],
    timings: Mapping[str, float],
) -> None:
    manifest = {
        "command": command,
        "config": dict(config),
        "seed": seed,
        "artifacts": [str(a) for a in artifacts],
        "version": __version__,
        "timings": dict(timings),
    }
    _write(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
