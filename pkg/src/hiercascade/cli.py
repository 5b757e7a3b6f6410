"""Command-line entry point.

Exit codes: 0 success, 2 usage, 3 I/O, 4 numeric divergence,
5 schema or schedule mismatch.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io as hio
from .cascade import (
    CascadeConfig,
    QueryEmbedding,
    batch_search,
    brute_force_batch,
    survivors_from_scan_counts,
)
from .cost import CostParams, hierarchical_cost, simulate_pipeline
from .errors import HierError, ScheduleError, ScheduleMismatch, UsageError
from .metrics import DEFAULT_KS, average_recall, evaluate, recall_at_k
from .store import HierSchedule, load_store, raw_store, save_store
from .synth import SynthConfig, generate_pairs
from .train import (
    TrainConfig,
    encode_corpus,
    projections_from_store,
    projections_to_store,
    scorer_from_store,
    scorer_to_store,
    train_eol,
)

log = logging.getLogger("hiercascade")

QUERIES_FILE = "queries.hvs"
GALLERY_FILE = "gallery.hvs"
TRUTH_FILE = "ground_truth.csv"


# -- flag parsing -----------------------------------------------------------


def _number(token: str) -> int | float:
    """Parse ``1000``, ``1e9`` or ``0.5``; integral values come back as int."""
    token = token.strip()
    try:
        return int(token)
    except ValueError:
        pass
    try:
        val = float(token)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {token!r}") from None
    if val.is_integer():
        return int(val)
    return val


def _int_list(text: str) -> list[int]:
    out = []
    for tok in text.split(","):
        val = _number(tok)
        if not isinstance(val, int):
            raise argparse.ArgumentTypeError(f"expected an integer, got {tok!r}")
        out.append(val)
    return out


def _schedule(dims: Sequence[int], scan_counts: Sequence[int] | None) -> HierSchedule:
    """Build a schedule from flag values, mapping violations to usage errors."""
    counts = list(scan_counts) if scan_counts is not None else [0] * len(dims)
    if len(counts) != len(dims):
        raise UsageError(f"--pools has {len(counts)} entries for {len(dims)} dims")
    try:
        if counts[0] and any(c == 0 or c > counts[0] for c in counts[1:]):
            raise ScheduleError(f"pools must be non-increasing: {counts}")
        return HierSchedule(tuple(dims), survivors_from_scan_counts(counts))
    except ScheduleError as exc:
        raise UsageError(str(exc)) from exc


def _with_scan_counts(schedule: HierSchedule, scan_counts: Sequence[int] | None) -> HierSchedule:
    if scan_counts is None:
        return schedule
    return _schedule(schedule.dims, scan_counts)


def _config_dict(args: argparse.Namespace) -> dict:
    return {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in sorted(vars(args).items())
        if k not in ("func",)
    }


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        hio.write_text(out, text)


# -- commands ---------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    cfg = SynthConfig(
        pairs=args.pairs,
        d_raw=args.d_raw,
        latent=args.latent,
        noise=args.noise,
        seed=args.seed,
        identical_views=args.identical_views,
    )
    ds = generate_pairs(cfg)
    out: Path = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        from .errors import IoFailure

        raise IoFailure(f"cannot create {out}: {exc}") from exc
    q_path, g_path, t_path = out / QUERIES_FILE, out / GALLERY_FILE, out / TRUTH_FILE
    save_store(raw_store(ds.queries, ds.ids), q_path)
    save_store(raw_store(ds.galleries, ds.ids), g_path)
    hio.write_truth(t_path, ds.ids.tolist(), ds.truth.tolist())
    hio.write_manifest(
        out / "synth.manifest.json",
        "synth",
        _config_dict(args),
        args.seed,
        [q_path, g_path, t_path],
        {"wall_s": time.perf_counter() - t0},
    )
    log.info("wrote %d pairs to %s", cfg.pairs, out)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    schedule = _schedule(args.dims, args.pools)
    cfg = TrainConfig(
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
        vlm=args.vlm,
        vlm_lr=args.vlm_lr,
        vlm_epochs=args.vlm_epochs,
    )
    data: Path = args.data
    queries = load_store(data / QUERIES_FILE)
    galleries = load_store(data / GALLERY_FILE)
    truth = hio.read_truth(data / TRUTH_FILE)
    # training pairs in query order, aligned through the ground truth
    q_pos = np.arange(len(queries))
    if args.train_pairs:
        q_pos = q_pos[: args.train_pairs]
    g_pos = galleries.positions(truth[int(queries.ids[p])] for p in q_pos)
    xq = queries.blocks[0][q_pos].astype(np.float64)
    xg = galleries.blocks[0][g_pos].astype(np.float64)

    result = train_eol(xq, xg, cfg, schedule)

    out: Path = args.out or data
    out.mkdir(parents=True, exist_ok=True)
    artifacts = [out / "proj_query.hvs", out / "proj_gallery.hvs", out / "history.csv"]
    save_store(projections_to_store(result.query_projections, schedule), artifacts[0])
    save_store(projections_to_store(result.gallery_projections, schedule), artifacts[1])
    hio.write_text(artifacts[2], hio.format_history(result.history))
    if result.scorer is not None:
        artifacts += [out / "scorer.hvs", out / "vlm_history.csv"]
        save_store(scorer_to_store(result.scorer), artifacts[3])
        hio.write_text(artifacts[4], hio.format_history(result.vlm_history))
    hio.write_manifest(
        out / "train.manifest.json",
        "train",
        _config_dict(args),
        args.seed,
        artifacts,
        {"wall_s": time.perf_counter() - t0},
    )
    log.info("final loss %.6g after %d epochs", result.history[-1] if result.history else float("nan"), cfg.epochs)
    return 0


def cmd_encode(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    raw = load_store(args.data / (QUERIES_FILE if args.side == "query" else GALLERY_FILE))
    proj_store = load_store(args.proj / f"proj_{args.side}.hvs")
    projections = projections_from_store(proj_store)
    n = len(raw) if not args.limit else min(args.limit, len(raw))
    store = encode_corpus(
        projections,
        raw.blocks[0][:n],
        proj_store.schedule,
        ids=raw.ids[:n],
        normalize=args.normalize,
    )
    save_store(store, args.out)
    hio.write_manifest(
        f"{args.out}.manifest.json",
        "encode",
        _config_dict(args),
        None,
        [args.out],
        {"wall_s": time.perf_counter() - t0},
    )
    return 0


def _load_search_inputs(args: argparse.Namespace):
    gallery = load_store(args.gallery)
    queries = load_store(args.queries)
    if queries.schedule.dims != gallery.schedule.dims:
        raise ScheduleMismatch(
            f"query dims {queries.schedule.dims} vs gallery dims {gallery.schedule.dims}"
        )
    schedule = _with_scan_counts(gallery.schedule, args.pools)
    scorer = None
    if getattr(args, "rerank", None):
        scorer = scorer_from_store(load_store(args.rerank))
    cfg = CascadeConfig(schedule, scorer, getattr(args, "rerank_depth", None))
    n = len(queries) if not args.limit else min(args.limit, len(queries))
    qs = [QueryEmbedding.from_store(queries, i) for i in range(n)]
    return gallery, queries.ids[:n].tolist(), qs, cfg


def cmd_search(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    gallery, qids, qs, cfg = _load_search_inputs(args)
    result = batch_search(qs, gallery, cfg, workers=args.workers, query_ids=qids)
    text = hio.format_traces(result.traces, levels=not args.final_only, timings=args.with_timings)
    _emit(text, args.out)
    if args.out is not None:
        hio.write_manifest(
            f"{args.out}.manifest.json",
            "search",
            _config_dict(args),
            None,
            [args.out],
            {"wall_s": time.perf_counter() - t0, "search_ns": result.wall_ns},
        )
    return 0


def bench_fields(gallery, qids, qs, cfg, truth, ks, workers) -> dict[str, object]:
    """Run the pruned cascade and a flat finest-level scan over the same queries."""
    missing = [q for q in qids if q not in truth]
    if missing:
        from .errors import MissingGroundTruth

        raise MissingGroundTruth(f"no ground truth for queries {missing[:5]}")
    gts = [truth[q] for q in qids]
    casc = batch_search(qs, gallery, cfg, workers=workers, query_ids=qids)
    final_len = len(casc.traces[0].final_ids) if casc.traces else 0
    k_flat = max(final_len, max(ks))
    flat, flat_ns = brute_force_batch([q.levels[-1] for q in qs], gallery, k_flat, workers)

    nq = max(len(qs), 1)
    casc_ns = casc.wall_ns / nq
    flat_ns_q = flat_ns / nq
    fields: dict[str, object] = {
        "queries": len(qs),
        "gallery": len(gallery),
        "dims": ",".join(map(str, cfg.schedule.dims)),
        "survivors": ",".join(map(str, cfg.schedule.pools)),
    }
    casc_ranked = [t.final_ids.tolist() for t in casc.traces]
    flat_ranked = [r.ids.tolist() for r in flat]
    for k in ks:
        rc = recall_at_k(casc_ranked, gts, k)
        rf = recall_at_k(flat_ranked, gts, k)
        fields[f"cascade_R@{k}"] = rc
        fields[f"flat_R@{k}"] = rf
        fields[f"delta_R@{k}"] = rc - rf
    # candidates scanned per level, identical for every query
    scanned = [lv.pool_in for lv in casc.traces[0].levels] if casc.traces else [len(gallery)] * len(cfg.schedule.dims)
    model = CostParams(
        t_e=0,
        encoder_layers=len(cfg.schedule.dims),
        n_candidates=len(gallery),
        dims=cfg.schedule.dims,
        counts=tuple(scanned),
        chunk_layers=1,
    )
    fields["analytic_speedup"] = f"{hierarchical_cost(model).speedup:.3f}"
    fields["cascade_ns_per_query"] = int(casc_ns)
    fields["flat_ns_per_query"] = int(flat_ns_q)
    fields["speedup"] = f"{flat_ns_q / casc_ns:.3f}" if casc_ns else "inf"
    if casc.traces:
        for i in range(len(cfg.schedule.dims)):
            mean_ns = sum(t.levels[i].elapsed_ns for t in casc.traces) / len(casc.traces)
            fields[f"level_{i + 1}_ns_per_query"] = int(mean_ns)
    return fields


def cmd_bench(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    gallery, qids, qs, cfg = _load_search_inputs(args)
    truth = hio.read_truth(args.truth)
    fields = bench_fields(gallery, qids, qs, cfg, truth, args.ks, args.workers)
    _emit(hio.format_kv(fields), args.out)
    if args.csv:
        hio.write_text(args.csv, hio.format_csv_row(fields))
    if args.out is not None:
        hio.write_manifest(
            f"{args.out}.manifest.json",
            "bench",
            _config_dict(args),
            None,
            [p for p in (args.out, args.csv) if p],
            {"wall_s": time.perf_counter() - t0},
        )
    return 0


def cmd_cost(args: argparse.Namespace) -> int:
    dims = args.dims
    counts = args.pools if args.pools is not None else [args.n] * len(dims)
    params = CostParams(
        t_e=args.te,
        encoder_layers=args.layers,
        n_candidates=args.n,
        dims=tuple(dims),
        counts=tuple(counts),
        unit_mul=args.unit,
        chunk_layers=args.chunk,
    )
    report = hierarchical_cost(params)
    text = report.to_text()
    if args.simulate:
        sim = simulate_pipeline(params)
        text += f"simulated_makespan = {sim.makespan}\n"
        text += f"critical_path = {' > '.join(sim.critical_path)}\n"
    _emit(text, args.out)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    if args.values:
        fields = {"values": len(args.values), "AR": average_recall(args.values)}
        _emit(hio.format_kv(fields), args.out)
        if args.csv:
            hio.write_text(args.csv, hio.format_csv_row(fields))
        return 0
    if not (args.results and args.truth):
        raise UsageError("eval needs --results and --truth, or --values")
    truth = hio.read_truth(args.truth)
    ranked, gts = hio.align(hio.read_rankings(args.results), truth)
    rev_ranked = rev_gts = None
    if args.reverse_results:
        rev_ranked, rev_gts = hio.align(
            hio.read_rankings(args.reverse_results), hio.invert_truth(truth)
        )
    report = evaluate(ranked, gts, args.ks, rev_ranked, rev_gts)
    _emit(report.to_text(), args.out)
    if args.csv:
        hio.write_text(args.csv, report.to_csv())
    return 0


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hiercascade",
        description="Coarse-to-fine hierarchical embedding retrieval experiments.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    p.add_argument("--pairs", type=int, required=True)
    p.add_argument("--d-raw", type=int, required=True)
    p.add_argument("--latent", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--identical-views", action="store_true",
                   help="use one mixing matrix for both sides")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit per-level projections")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--dims", type=_int_list, required=True)
    p.add_argument("--pools", type=_int_list, default=None,
                   help="candidates scored per level, 0 = whole gallery")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-pairs", type=int, default=0,
                   help="train on the first N pairs only (0 = all)")
    p.add_argument("--vlm", action="store_true", help="also fit the matching head")
    p.add_argument("--vlm-lr", type=float, default=1e-3)
    p.add_argument("--vlm-epochs", type=int, default=20)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="project raw items into a hierarchical store")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--proj", type=Path, required=True)
    p.add_argument("--side", choices=("query", "gallery"), required=True)
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--normalize", action="store_true",
                   help="L2-normalize every level vector")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_encode)

    for name, func in (("search", cmd_search), ("bench", cmd_bench)):
        p = sub.add_parser(name, help="cascade search" if name == "search"
                           else "cascade vs flat timing and recall")
        p.add_argument("--gallery", type=Path, required=True)
        p.add_argument("--queries", type=Path, required=True)
        p.add_argument("--pools", type=_int_list, default=None,
                       help="candidates scored per level, 0 = whole gallery")
        p.add_argument("--rerank", type=Path, default=None)
        p.add_argument("--rerank-depth", type=int, default=None)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--limit", type=int, default=0)
        p.add_argument("--out", type=Path, default=None)
        if name == "search":
            p.add_argument("--final-only", action="store_true")
            p.add_argument("--with-timings", action="store_true")
        else:
            p.add_argument("--truth", type=Path, required=True)
            p.add_argument("--ks", type=_int_list, default=list(DEFAULT_KS))
            p.add_argument("--csv", type=Path, default=None)
        p.set_defaults(func=func)

    p = sub.add_parser("cost", help="analytic retrieval-time model")
    p.add_argument("--n", type=_number, required=True)
    p.add_argument("--pools", type=_int_list, default=None)
    p.add_argument("--dims", type=_int_list, required=True)
    p.add_argument("--te", type=_number, default=1000)
    p.add_argument("--layers", type=int, default=12)
    p.add_argument("--chunk", type=int, default=None)
    p.add_argument("--unit", type=_number, default=1)
    p.add_argument("--simulate", action="store_true")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("eval", help="recall@K and average recall")
    p.add_argument("--results", type=Path, default=None)
    p.add_argument("--reverse-results", type=Path, default=None)
    p.add_argument("--truth", type=Path, default=None)
    p.add_argument("--ks", type=_int_list, default=list(DEFAULT_KS))
    p.add_argument("--values", type=lambda s: [float(v) for v in s.split(",")], default=None)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--csv", type=Path, default=None)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors this way
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except HierError as exc:
        print(f"hiercascade {args.command}: {exc}", file=sys.stderr)
        if exc.exit_code == 2:
            parser.print_usage(sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"hiercascade {args.command}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
