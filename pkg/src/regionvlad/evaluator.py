"""Precision-recall evaluation and the per-stage timing harness.

PR curves follow the single-image retrieval convention: each query
contributes its best match only; the score threshold sweeps the distinct
best scores. A query whose best match is correct counts as TP when accepted
and FN when rejected; an accepted wrong best match is FP. Queries whose
best match is wrong and rejected carry no retrieval evidence and appear in
neither precision nor recall.
"""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import dataclass

import numpy as np

from .codebook import Codebook, KMeansConfig, quantize, train_codebook
from .errors import InputError
from .matcher import MatchResult, match_all
from .regions import RegionConfig, aggregate_regions, extract_regions
from .tensor_io import DatasetManifest, FeatureTensor
from .vlad import VladConfig, VladStore, encode_vlad


@dataclass(frozen=True)
class PrCurve:
    points: list[tuple[float, float, float]]  # (threshold, precision, recall), descending threshold
    auc: float
    n_queries: int
    n_excluded: int

    def __post_init__(self):
        recalls = [r for _, _, r in self.points]
        if any(b < a - 1e-12 for a, b in zip(recalls, recalls[1:])):
            raise InputError("recall must be non-decreasing as the threshold falls")
        for _, p, r in self.points:
            if not (0.0 <= p <= 1.0 and 0.0 <= r <= 1.0):
                raise InputError("precision/recall out of [0, 1]")


def _trapezoid_auc(points: list[tuple[float, float, float]]) -> float:
    """Trapezoid over recall-sorted points, anchored at recall 0."""
    if not points:
        return 0.0
    pr = sorted(((r, p) for _, p, r in points), key=lambda t: t[0])
    pr.insert(0, (0.0, points[0][1]))
    auc = 0.0
    for (r0, p0), (r1, p1) in zip(pr, pr[1:]):
        auc += (r1 - r0) * (p0 + p1) / 2.0
    return auc


def _correctness(results: list[MatchResult], gt: DatasetManifest):
    """Per ground-truthed query: (best_score, best is admissible)."""
    by_id = {r.query_id: r for r in results}
    scored = []
    excluded = 0
    for qi, entry in enumerate(gt.queries):
        r = by_id.get(entry.image_id)
        if r is None:
            raise InputError(f"query {entry.image_id!r} missing from results")
        if not gt.has_ground_truth(qi):
            excluded += 1
            continue
        scored.append((r.best_score, r.best_index in gt.admissible(qi)))
    return scored, excluded


def pr_curve(results: list[MatchResult], gt: DatasetManifest) -> PrCurve:
    """Sweep the distinct best scores and integrate precision over recall."""
    scored, excluded = _correctness(results, gt)
    if not scored:
        raise InputError("no ground-truthed queries to evaluate")

    thresholds = sorted({s for s, _ in scored}, reverse=True)
    n_correct = sum(1 for _, ok in scored if ok)
    points = []
    for theta in thresholds:
        tp = sum(1 for s, ok in scored if s >= theta and ok)
        fp = sum(1 for s, ok in scored if s >= theta and not ok)
        fn = n_correct - tp
        precision = tp / (tp + fp) if (tp + fp) else 1.0
        recall = tp / (tp + fn) if (tp + fn) else 0.0
        points.append((theta, precision, recall))
    return PrCurve(
        points=points,
        auc=_trapezoid_auc(points),
        n_queries=len(scored),
        n_excluded=excluded,
    )


def recall_at_1(results: list[MatchResult], gt: DatasetManifest) -> float:
    """Fraction of ground-truthed queries whose best match is admissible."""
    scored, _ = _correctness(results, gt)
    if not scored:
        raise InputError("no ground-truthed queries to evaluate")
    return sum(1 for _, ok in scored if ok) / len(scored)


def write_pr_csv(pr: PrCurve, path) -> None:
    lines = ["threshold,precision,recall"]
    lines += [f"{repr(t)},{repr(p)},{repr(r)}" for t, p, r in pr.points]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_pr_json(pr: PrCurve, path, recall1: float | None = None) -> None:
    doc = {"auc": pr.auc, "n_queries": pr.n_queries, "n_excluded": pr.n_excluded}
    if recall1 is not None:
        doc["recall_at_1"] = recall1
    with open(path, "w") as fh:
        fh.write(json.dumps(doc, indent=2) + "\n")


def write_pr_dat(pr: PrCurve, path) -> None:
    """gnuplot-friendly: threshold precision recall, space separated."""
    with open(path, "w") as fh:
        fh.write("# threshold precision recall\n")
        for t, p, r in pr.points:
            fh.write(f"{repr(t)} {repr(p)} {repr(r)}\n")


@dataclass(frozen=True)
class StageStats:
    mean: float
    std: float
    iteration_means: tuple[float, ...]


@dataclass(frozen=True)
class TimingReport:
    extraction_s: StageStats  # per image, seconds
    encoding_ms: StageStats  # per image, milliseconds
    matching_ms: StageStats  # per pair, milliseconds
    images: int
    pairs: int
    iterations: int
    top_n: int
    clusters: int


def _stage_stats(iteration_means: list[float]) -> StageStats:
    mean = statistics.fmean(iteration_means)
    std = statistics.pstdev(iteration_means) if len(iteration_means) > 1 else 0.0
    return StageStats(mean=mean, std=std, iteration_means=tuple(iteration_means))


def run_timing(
    tensors: list[FeatureTensor],
    region_cfg: RegionConfig,
    vlad_cfg: VladConfig,
    kmeans_cfg: KMeansConfig,
    iterations: int = 5,
    codebook: Codebook | None = None,
) -> TimingReport:
    """Wall-clock the three pipeline stages over in-memory tensors.

    Tensors are held in memory so file I/O never contaminates stage timings;
    codebook training happens once during setup and is untimed.
    """
    if not tensors:
        raise InputError("timing needs at least one tensor")
    if iterations < 1:
        raise InputError("iterations must be >= 1")

    # Untimed setup pass: features for vocabulary training.
    setup_feats = []
    for t in tensors:
        rs = extract_regions(t, region_cfg)
        setup_feats.append(aggregate_regions(t, rs, mode=region_cfg.aggregation))
    if codebook is None:
        codebook = train_codebook(setup_feats, kmeans_cfg)

    extraction, encoding, matching = [], [], []
    n = len(tensors)
    for _ in range(iterations):
        feats = []
        t0 = time.perf_counter()
        for t in tensors:
            rs = extract_regions(t, region_cfg)
            feats.append(aggregate_regions(t, rs, mode=region_cfg.aggregation))
        extraction.append((time.perf_counter() - t0) / n)

        descriptors = []
        t0 = time.perf_counter()
        for f in feats:
            labels = quantize(f, codebook)
            descriptors.append(encode_vlad(f, labels, codebook, vlad_cfg))
        encoding.append(1000.0 * (time.perf_counter() - t0) / n)

        store = VladStore.from_descriptors(descriptors)
        t0 = time.perf_counter()
        match_all(store, store)
        matching.append(1000.0 * (time.perf_counter() - t0) / (n * n))

    return TimingReport(
        extraction_s=_stage_stats(extraction),
        encoding_ms=_stage_stats(encoding),
        matching_ms=_stage_stats(matching),
        images=n,
        pairs=n * n,
        iterations=iterations,
        top_n=region_cfg.top_n,
        clusters=codebook.clusters,
    )


def timing_report_json(report: TimingReport) -> str:
    doc = {
        "images": report.images,
        "pairs": report.pairs,
        "iterations": report.iterations,
        "top_n": report.top_n,
        "clusters": report.clusters,
        "stages": {
            "region_extraction_s_per_image": {
                "mean": report.extraction_s.mean,
                "std": report.extraction_s.std,
                "iteration_means": list(report.extraction_s.iteration_means),
            },
            "vlad_encoding_ms_per_image": {
                "mean": report.encoding_ms.mean,
                "std": report.encoding_ms.std,
                "iteration_means": list(report.encoding_ms.iteration_means),
            },
            "vlad_matching_ms_per_pair": {
                "mean": report.matching_ms.mean,
                "std": report.matching_ms.std,
                "iteration_means": list(report.matching_ms.iteration_means),
            },
        },
    }
    return json.dumps(doc, indent=2) + "\n"


def timing_report_table(report: TimingReport) -> str:
    rows = [
        ("ROIs \"N\"", str(report.top_n)),
        ("Regions \"V\"", str(report.clusters)),
        ("Images", str(report.images)),
        ("Iterations", str(report.iterations)),
        ("Extraction time (s)", f"{report.extraction_s.mean:.4f} +/- {report.extraction_s.std:.4f}"),
        ("VLAD encoding (ms)", f"{report.encoding_ms.mean:.3f} +/- {report.encoding_ms.std:.3f}"),
        ("VLAD matching (ms)", f"{report.matching_ms.mean:.4f} +/- {report.matching_ms.std:.4f}"),
    ]
    width = max(len(label) for label, _ in rows)
    lines = [f"{label.ljust(width)}  {value}" for label, value in rows]
    return "\n".join(lines) + "\n"
