"""Command-line front end: build-vocab | encode | match | evaluate | timing.

Every numeric knob is available as a flag and through a JSON config file
(flags win). Progress goes to stderr as key=value lines; artifacts are
deterministic given identical inputs and seeds. Exit codes: 0 success,
1 internal error, 2 user/config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .codebook import KMeansConfig, load_codebook, save_codebook, train_codebook
from .errors import RegionVladError
from .evaluator import (
    pr_curve,
    recall_at_1,
    run_timing,
    timing_report_json,
    timing_report_table,
    write_pr_csv,
    write_pr_dat,
    write_pr_json,
)
from .matcher import (
    match_all,
    suggest_threshold,
    threshold_partition,
    write_results_csv,
    write_results_json,
)
from .pipeline import encode_image, extract_features
from .regions import RegionConfig
from .tensor_io import load_manifest, load_tensor
from .vlad import VladConfig, VladStore, load_store, save_store

PRESETS = {
    "n400-v256": {"top_n": 400, "clusters": 256},
    "n200-v128": {"top_n": 200, "clusters": 128},
}

_EXIT_OK = 0
_EXIT_INTERNAL = 1
_EXIT_USER = 2


class UsageError(Exception):
    """User or configuration mistake; maps to exit code 2."""


def _log(**kv):
    print(" ".join(f"{k}={v}" for k, v in kv.items()), file=sys.stderr)


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, help="JSON config file; flags override it")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="named (top_n, clusters) preset")
    parser.add_argument("--top-n", type=int, dest="top_n", default=None)
    parser.add_argument("--tau", type=float, default=None, help="relative join tolerance")
    parser.add_argument("--neighbourhood", type=int, choices=(4, 8), default=None)
    parser.add_argument("--floor", type=float, default=None, help="activation floor")
    parser.add_argument(
        "--aggregation", choices=("bbox", "mask"), default=None, help="regional pooling variant"
    )
    parser.add_argument("--gamma", type=float, default=None, help="power-normalization exponent")
    parser.add_argument("--clusters", "-V", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--max-iters", type=int, dest="max_iters", default=None)
    parser.add_argument("--tol", type=float, default=None)
    parser.add_argument("--init", choices=("plus-plus", "random-points"), default=None)
    parser.add_argument("--restarts", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None, help="worker processes (default: all cores)")


_DEFAULTS = {
    "top_n": 400,
    "tau": 0.05,
    "neighbourhood": 8,
    "floor": 0.0,
    "aggregation": "bbox",
    "gamma": 0.5,
    "clusters": 256,
    "seed": 0,
    "max_iters": 100,
    "tol": 1e-4,
    "init": "plus-plus",
    "restarts": 1,
    "workers": 0,
}


def _settings(args: argparse.Namespace) -> dict:
    """defaults < preset < config file < explicit flags."""
    merged = dict(_DEFAULTS)
    if args.preset:
        merged.update(PRESETS[args.preset])
    if args.config:
        if not args.config.exists():
            raise UsageError(f"config file not found: {args.config}")
        try:
            doc = json.loads(args.config.read_text())
        except json.JSONDecodeError as e:
            raise UsageError(f"config file is not valid JSON: {e}") from e
        unknown = set(doc) - set(_DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        merged.update(doc)
    for key in _DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    return merged


def _region_cfg(s: dict) -> RegionConfig:
    return RegionConfig(
        top_n=s["top_n"],
        neighbourhood=s["neighbourhood"],
        similarity_tau=s["tau"],
        activation_floor=s["floor"],
        aggregation=s["aggregation"],
    )


def _kmeans_cfg(s: dict) -> KMeansConfig:
    return KMeansConfig(
        clusters=s["clusters"],
        seed=s["seed"],
        max_iters=s["max_iters"],
        tol=s["tol"],
        init=s["init"],
        restarts=s["restarts"],
    )


def _worker_count(s: dict) -> int:
    if s["workers"] and s["workers"] > 0:
        return int(s["workers"])
    return os.cpu_count() or 1


_POOL_STATE: dict = {}


def _pool_init(codebook_path, region_cfg, vlad_cfg):
    _POOL_STATE["codebook"] = load_codebook(codebook_path) if codebook_path else None
    _POOL_STATE["region_cfg"] = region_cfg
    _POOL_STATE["vlad_cfg"] = vlad_cfg


def _features_task(item):
    image_id, tensor_path = item
    t = load_tensor(tensor_path, image_id=image_id)
    return extract_features(t, _POOL_STATE["region_cfg"])


def _encode_task(item):
    image_id, tensor_path = item
    t = load_tensor(tensor_path, image_id=image_id)
    return encode_image(
        t, _POOL_STATE["codebook"], _POOL_STATE["region_cfg"], _POOL_STATE["vlad_cfg"]
    )


def _map_images(task, entries, workers, codebook_path, region_cfg, vlad_cfg):
    """Order-preserving per-image map, inline or across worker processes."""
    items = [(e.image_id, e.tensor_path) for e in entries]
    if workers <= 1 or len(items) < 2:
        _pool_init(codebook_path, region_cfg, vlad_cfg)
        return [task(item) for item in items]
    with ProcessPoolExecutor(
        max_workers=min(workers, len(items)),
        initializer=_pool_init,
        initargs=(codebook_path, region_cfg, vlad_cfg),
    ) as pool:
        return list(pool.map(task, items, chunksize=max(1, len(items) // (4 * workers))))


def _manifest_entries(manifest, traverse: str):
    if traverse == "queries":
        return manifest.queries
    if traverse == "references":
        return manifest.references
    raise UsageError(f"unknown traverse {traverse!r}")


def cmd_build_vocab(args) -> int:
    s = _settings(args)
    manifest = load_manifest(args.manifest)
    entries = manifest.queries + manifest.references
    if not entries:
        raise UsageError("manifest lists no images")
    region_cfg, kmeans_cfg = _region_cfg(s), _kmeans_cfg(s)
    workers = _worker_count(s)
    _log(event="build-vocab", images=len(entries), clusters=kmeans_cfg.clusters, workers=workers)
    features = _map_images(_features_task, entries, workers, None, region_cfg, VladConfig())
    total_rows = sum(f.matrix.shape[0] for f in features)
    if total_rows < kmeans_cfg.clusters:
        raise UsageError(
            f"insufficient features: {total_rows} regional features for "
            f"{kmeans_cfg.clusters} clusters"
        )
    cb = train_codebook(features, kmeans_cfg)
    save_codebook(cb, args.output)
    _log(
        event="vocab-trained",
        V=cb.clusters,
        K=cb.dim,
        inertia=cb.train_meta.final_inertia,
        iterations=cb.train_meta.iterations_run,
        output=args.output,
    )
    return _EXIT_OK


def cmd_encode(args) -> int:
    s = _settings(args)
    manifest = load_manifest(args.manifest)
    entries = _manifest_entries(manifest, args.traverse)
    if not entries:
        raise UsageError(f"manifest traverse {args.traverse!r} is empty")
    codebook = load_codebook(args.codebook)
    region_cfg = _region_cfg(s)
    vlad_cfg = VladConfig(gamma=s["gamma"])
    workers = _worker_count(s)
    _log(event="encode", images=len(entries), traverse=args.traverse, workers=workers)
    probe = load_tensor(entries[0].tensor_path, image_id=entries[0].image_id)
    if probe.channels != codebook.dim:
        raise UsageError(
            f"tensor channel count {probe.channels} does not match codebook dim {codebook.dim}"
        )
    descriptors = _map_images(
        _encode_task, entries, workers, args.codebook, region_cfg, vlad_cfg
    )
    store = VladStore.from_descriptors(descriptors)
    save_store(store, args.output)
    _log(event="encoded", count=len(store), V=store.clusters, K=store.dim, output=args.output)
    return _EXIT_OK


def cmd_match(args) -> int:
    queries = load_store(args.queries)
    references = load_store(args.references)
    if len(queries) == 0:
        raise UsageError("query store is empty")
    if len(references) == 0:
        raise UsageError("reference store is empty")
    results = match_all(queries, references)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_results_csv(results, references, out_dir / "matches.csv")
    write_results_json(results, references, out_dir / "matches.json")
    total = sum(r.scan_seconds for r in results)
    _log(
        event="matched",
        queries=len(queries),
        references=len(references),
        total_scan_s=f"{total:.6f}",
        mean_pair_ms=f"{1000.0 * total / (len(queries) * len(references)):.6f}",
    )
    return _EXIT_OK


def cmd_evaluate(args) -> int:
    manifest = load_manifest(args.manifest)
    queries = load_store(args.queries)
    references = load_store(args.references)
    if len(queries) == 0 or len(references) == 0:
        raise UsageError("both stores must be non-empty")
    results = match_all(queries, references)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    pr = pr_curve(results, manifest)
    r1 = recall_at_1(results, manifest)
    write_pr_csv(pr, out_dir / "pr.csv")
    write_pr_json(pr, out_dir / "pr.json", recall1=r1)
    write_pr_dat(pr, out_dir / "pr.dat")
    _log(event="evaluated", auc=pr.auc, recall_at_1=r1, queries=pr.n_queries, excluded=pr.n_excluded)

    theta = args.threshold
    if args.negatives_store:
        negatives = load_store(args.negatives_store)
        if len(negatives) == 0:
            raise UsageError("negatives store is empty")
        neg_results = match_all(negatives, references)
        theta = suggest_threshold(neg_results)
        _log(event="suggested-threshold", theta=theta, negatives=len(negatives))
    if theta is not None:
        report = threshold_partition(results, manifest, theta)
        doc = {
            "threshold": report.threshold,
            "tp": report.tp,
            "fn": report.fn,
            "fp": report.fp,
            "tn": report.tn,
            "outcomes": report.outcomes,
        }
        (out_dir / "threshold.json").write_text(json.dumps(doc, indent=2) + "\n")
        _log(event="thresholded", theta=theta, tp=report.tp, fn=report.fn, fp=report.fp, tn=report.tn)
    return _EXIT_OK


def cmd_timing(args) -> int:
    s = _settings(args)
    manifest = load_manifest(args.manifest)
    entries = manifest.queries + manifest.references
    if not entries:
        raise UsageError("manifest lists no images")
    tensors = [load_tensor(e.tensor_path, image_id=e.image_id) for e in entries]
    report = run_timing(
        tensors,
        _region_cfg(s),
        VladConfig(gamma=s["gamma"]),
        _kmeans_cfg(s),
        iterations=args.iterations,
    )
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "timing.json").write_text(timing_report_json(report))
    table = timing_report_table(report)
    (out_dir / "timing.txt").write_text(table)
    sys.stdout.write(table)
    _log(
        event="timing",
        images=report.images,
        iterations=report.iterations,
        extraction_s=f"{report.extraction_s.mean:.6f}",
        encoding_ms=f"{report.encoding_ms.mean:.4f}",
        matching_ms=f"{report.matching_ms.mean:.6f}",
    )
    return _EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regionvlad",
        description="Place retrieval over CNN feature tensors: regional VLAD encoding, "
        "exhaustive matching and PR evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="train the regional vocabulary from a manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True, help="codebook file to write")
    _add_common(p)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("encode", help="encode a manifest traverse into a VLAD store")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--codebook", type=Path, required=True)
    p.add_argument("--traverse", choices=("queries", "references"), default="queries")
    p.add_argument("--output", type=Path, required=True, help="VLAD store file to write")
    _add_common(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("match", help="match a query store against a reference store")
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--references", type=Path, required=True)
    p.add_argument("--output-dir", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("evaluate", help="PR curve, recall@1 and optional threshold partition")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--references", type=Path, required=True)
    p.add_argument("--output-dir", type=Path, required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument(
        "--negatives-store",
        type=Path,
        default=None,
        help="store of known-negative queries; sets the threshold to their mean best score",
    )
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("timing", help="per-stage wall-clock report over a manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--output-dir", type=Path, required=True)
    p.add_argument("--iterations", type=int, default=5)
    _add_common(p)
    p.set_defaults(func=cmd_timing)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits with 2 on usage errors, matching our convention.
        return int(e.code or 0)
    try:
        return args.func(args)
    except UsageError as e:
        _log(event="error", kind="usage")
        print(f"error: {e}", file=sys.stderr)
        return _EXIT_USER
    except RegionVladError as e:
        _log(event="error", kind=type(e).__name__)
        print(f"error: {e}", file=sys.stderr)
        return _EXIT_USER
    except Exception as e:  # pragma: no cover - defensive
        print(f"internal error: {e}", file=sys.stderr)
        return _EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
