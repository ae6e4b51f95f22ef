"""Independent reference implementations used to cross-check the engine.

Everything here is deliberately written as plain loops over scalars so the
oracles share no code path with the vectorized implementations they verify.
"""

import math

import numpy as np


def flood_fill_partition(data, cfg):
    """Per-channel BFS flood fill under the relative-tolerance join predicate.

    Returns the partition as a set of frozensets of (channel, row, col).
    A zero-range channel collapses to a single region of all above-floor
    cells, mirroring the degenerate-channel rule.
    """
    k, y, x = data.shape
    if cfg.neighbourhood == 4:
        offsets = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        offsets = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]
    parts = set()
    for c in range(k):
        cells = [
            (i, j) for i in range(y) for j in range(x) if float(data[c, i, j]) > cfg.activation_floor
        ]
        if not cells:
            continue
        vals = [float(data[c, i, j]) for i, j in cells]
        cmax, cmin = max(vals), min(vals)
        if cmax == cmin:
            parts.add(frozenset((c, i, j) for i, j in cells))
            continue
        tol = cfg.similarity_tau * (cmax - cmin)
        cellset = set(cells)
        seen = set()
        for start in cells:
            if start in seen:
                continue
            region = {start}
            queue = [start]
            seen.add(start)
            while queue:
                i, j = queue.pop()
                for di, dj in offsets:
                    nb = (i + di, j + dj)
                    if nb in cellset and nb not in seen:
                        if abs(float(data[c, i, j]) - float(data[c, nb[0], nb[1]])) <= tol:
                            seen.add(nb)
                            region.add(nb)
                            queue.append(nb)
            parts.add(frozenset((c, i, j) for i, j in region))
    return parts


def region_set_partition(rs):
    return {frozenset((r.channel, i, j) for i, j in r.pixels) for r in rs.regions}


def bbox_sum_oracle(data, bbox):
    """Nested-loop double-precision summation over a bounding box."""
    r0, r1, c0, c1 = bbox
    k = data.shape[0]
    out = [0.0] * k
    for c in range(k):
        acc = 0.0
        for i in range(r0, r1 + 1):
            for j in range(c0, c1 + 1):
                acc += float(data[c, i, j])
        out[c] = acc
    return np.array(out)


def straight_line_vlad(rows, labels, centroids, gamma):
    """Scalar loops straight off the residual/power/L2 formula chain."""
    v = len(centroids)
    k = len(centroids[0])
    raw = [[0.0] * k for _ in range(v)]
    for t, row in enumerate(rows):
        u = labels[t]
        for d in range(k):
            raw[u][d] += float(row[d]) - float(centroids[u][d])
    out = [[0.0] * k for _ in range(v)]
    for u in range(v):
        powed = [math.copysign(abs(val) ** gamma, val) if val != 0.0 else 0.0 for val in raw[u]]
        norm = math.sqrt(sum(p * p for p in powed))
        if norm > 0.0:
            out[u] = [p / norm for p in powed]
    return np.array(out)


def pair_score_oracle(a, b):
    """Scalar re-derivation of the summed per-cluster cosine."""
    total = 0.0
    for u in range(a.shape[0]):
        na = math.sqrt(float(np.dot(a[u], a[u])))
        nb = math.sqrt(float(np.dot(b[u], b[u])))
        if na == 0.0 or nb == 0.0:
            continue
        total += float(np.dot(a[u], b[u])) / (na * nb)
    return total


def brute_force_labels(x, centroids):
    """O(N*V) nearest-centroid scan in double precision."""
    labels = []
    for row in x:
        dists = [float(np.sum((row - c) ** 2)) for c in centroids]
        labels.append(int(np.argmin(dists)))
    return labels


def exhaustive_best_two_partition(points):
    """Enumerate every 2-partition; centroid = mean; return min inertia."""
    import itertools

    pts = np.asarray(points, dtype=np.float64)
    best = np.inf
    for assignment in itertools.product((0, 1), repeat=len(pts)):
        if len(set(assignment)) != 2:
            continue
        inertia = 0.0
        for cluster in (0, 1):
            members = pts[[a == cluster for a in assignment]]
            centroid = members.mean(axis=0)
            inertia += float(((members - centroid) ** 2).sum())
        best = min(best, inertia)
    return best


def sweep_oracle(scored):
    """Literal re-derivation of the PR sweep and the anchored trapezoid.

    ``scored``: list of (best_score, correct). Returns (points, auc).
    """
    thresholds = sorted({s for s, _ in scored}, reverse=True)
    n_correct = sum(1 for _, ok in scored if ok)
    points = []
    for theta in thresholds:
        tp = sum(1 for s, ok in scored if s >= theta and ok)
        fp = sum(1 for s, ok in scored if s >= theta and not ok)
        fn = n_correct - tp
        p = tp / (tp + fp) if tp + fp else 1.0
        r = tp / (tp + fn) if tp + fn else 0.0
        points.append((theta, p, r))
    # Recall never decreases as theta falls, so the sweep order already is
    # the recall order; equal-recall ties keep their sweep positions.
    anchored = [(0.0, points[0][1])] + [(r, p) for _, p, r in points]
    auc = sum(
        (r1 - r0) * (p0 + p1) / 2.0 for (r0, p0), (r1, p1) in zip(anchored, anchored[1:])
    )
    return points, auc
