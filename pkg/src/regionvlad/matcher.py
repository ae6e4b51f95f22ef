"""Descriptor matching, retrieval and threshold-based outcome partitioning.

The match score between two descriptors is the sum over clusters of the
cosine of their per-cluster rows; a cluster missing on either side (zero row)
contributes exactly zero. Retrieval is an exhaustive linear scan.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, IoError
from .tensor_io import DatasetManifest
from .vlad import VladDescriptor, VladStore


@dataclass(frozen=True)
class MatchResult:
    query_id: str
    scores: list[tuple[int, float]]  # (reference_index, score) for every reference
    best_index: int
    best_score: float
    scan_seconds: float = 0.0


@dataclass(frozen=True)
class ThresholdReport:
    threshold: float
    outcomes: list[str]  # per query, aligned with the manifest order
    tp: int
    fn: int
    fp: int
    tn: int


def _row_cosines(a: np.ndarray, b: np.ndarray, a_norm2: np.ndarray | None = None) -> np.ndarray:
    """Per-cluster cosines with the 0-row convention; clipped to [-1, 1].

    sqrt(fl(s*s)) == s exactly in IEEE doubles, so a descriptor matched
    against itself scores exactly 1.0 on every nonzero row.
    """
    if a_norm2 is None:
        a_norm2 = np.einsum("uk,uk->u", a, a)
    b_norm2 = np.einsum("uk,uk->u", b, b)
    dots = np.einsum("uk,uk->u", a, b)
    denom2 = a_norm2 * b_norm2
    ok = denom2 > 0.0
    out = np.zeros(a.shape[0], dtype=np.float64)
    out[ok] = np.clip(dots[ok] / np.sqrt(denom2[ok]), -1.0, 1.0)
    return out


def match_pair(a: VladDescriptor, b: VladDescriptor) -> float:
    """Summed per-cluster cosine similarity between two descriptors."""
    if a.matrix.shape != b.matrix.shape:
        raise InputError(f"descriptor shapes differ: {a.matrix.shape} vs {b.matrix.shape}")
    return float(_row_cosines(a.matrix, b.matrix).sum())


def retrieve(q: VladDescriptor, refs: VladStore) -> MatchResult:
    """Score ``q`` against every reference; argmax with lowest-index ties."""
    if len(refs) == 0:
        raise InputError("reference store is empty")
    if (refs.clusters, refs.dim) != q.matrix.shape:
        raise InputError(
            f"store shape ({refs.clusters}, {refs.dim}) does not match query {q.matrix.shape}"
        )
    t0 = time.perf_counter()
    q_norm2 = np.einsum("uk,uk->u", q.matrix, q.matrix)
    scores = np.empty(len(refs), dtype=np.float64)
    for i in range(len(refs)):
        scores[i] = _row_cosines(q.matrix, refs.data[i], a_norm2=q_norm2).sum()
    elapsed = time.perf_counter() - t0
    best = int(np.argmax(scores))
    return MatchResult(
        query_id=q.image_id,
        scores=[(i, float(s)) for i, s in enumerate(scores)],
        best_index=best,
        best_score=float(scores[best]),
        scan_seconds=elapsed,
    )


def match_all(queries: VladStore, refs: VladStore) -> list[MatchResult]:
    """Retrieve every query in store order."""
    return [retrieve(queries.descriptor(i), refs) for i in range(len(queries))]


def suggest_threshold(negative_results: list[MatchResult]) -> float:
    """Mean best score over queries known to have no true counterpart."""
    if not negative_results:
        raise InputError("need at least one known-negative result")
    return float(np.mean([r.best_score for r in negative_results]))


def threshold_partition(
    results: list[MatchResult], gt: DatasetManifest, threshold: float
) -> ThresholdReport:
    """Classify every query as TP, FN, FP or TN at the given score threshold."""
    by_id = {r.query_id: r for r in results}
    outcomes = []
    counts = {"TP": 0, "FN": 0, "FP": 0, "TN": 0}
    for qi, entry in enumerate(gt.queries):
        r = by_id.get(entry.image_id)
        if r is None:
            raise InputError(f"query {entry.image_id!r} missing from results")
        accepted = r.best_score >= threshold
        if gt.has_ground_truth(qi):
            if not accepted:
                outcome = "FN"
            elif r.best_index in gt.admissible(qi):
                outcome = "TP"
            else:
                outcome = "FP"
        else:
            outcome = "FP" if accepted else "TN"
        outcomes.append(outcome)
        counts[outcome] += 1
    return ThresholdReport(
        threshold=threshold,
        outcomes=outcomes,
        tp=counts["TP"],
        fn=counts["FN"],
        fp=counts["FP"],
        tn=counts["TN"],
    )


def write_results_csv(results: list[MatchResult], refs: VladStore, path: str | Path) -> None:
    """All references per query, ranked by descending score (csv)."""
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["query_id", "reference_id", "rank", "score"])
            for r in results:
                ranked = sorted(r.scores, key=lambda t: (-t[1], t[0]))
                for rank, (ri, score) in enumerate(ranked, start=1):
                    writer.writerow([r.query_id, refs.ids[ri], rank, repr(score)])
    except OSError as e:
        raise IoError(f"cannot write results csv {path}: {e}") from e


def write_results_json(
    results: list[MatchResult], refs: VladStore, path: str | Path
) -> None:
    """Best match per query plus scan timings."""
    doc = {
        "n_queries": len(results),
        "n_references": len(refs),
        "best_matches": [
            {
                "query_id": r.query_id,
                "reference_id": refs.ids[r.best_index],
                "reference_index": r.best_index,
                "score": r.best_score,
            }
            for r in results
        ],
        "timings": {
            "total_scan_seconds": sum(r.scan_seconds for r in results),
            "mean_pair_ms": (
                1000.0 * sum(r.scan_seconds for r in results) / (len(results) * len(refs))
                if results and len(refs)
                else 0.0
            ),
        },
    }
    try:
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")
    except OSError as e:
        raise IoError(f"cannot write results json {path}: {e}") from e
