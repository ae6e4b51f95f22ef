"""Connected-region identification, energy ranking and regional aggregation.

Each feature map is segmented into regions of neighbouring cells with
approximately equal activation; regions are ranked by mean energy, the top-N
become ROIs, and each ROI is summarised by summing the K-dimensional local
descriptors under its bounding box.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ConfigError, InputError
from .tensor_io import FeatureTensor


@dataclass(frozen=True)
class RegionConfig:
    """Knobs for region identification and selection.

    Two neighbouring above-floor cells join one region iff their activation
    difference is at most ``similarity_tau`` times the channel's value range.
    """

    top_n: int = 400
    neighbourhood: int = 8  # 4 or 8
    similarity_tau: float = 0.05
    activation_floor: float = 0.0
    aggregation: str = "bbox"  # "bbox" | "mask"

    def __post_init__(self):
        if self.top_n < 1:
            raise ConfigError(f"top_n must be >= 1, got {self.top_n}")
        if self.neighbourhood not in (4, 8):
            raise ConfigError(f"neighbourhood must be 4 or 8, got {self.neighbourhood}")
        if not (0.0 < self.similarity_tau <= 1.0):
            raise ConfigError(f"similarity_tau must be in (0, 1], got {self.similarity_tau}")
        if self.aggregation not in ("bbox", "mask"):
            raise ConfigError(f"aggregation must be 'bbox' or 'mask', got {self.aggregation}")


@dataclass(frozen=True)
class Region:
    channel: int
    pixels: frozenset[tuple[int, int]]
    bbox: tuple[int, int, int, int]  # row_min, row_max, col_min, col_max (inclusive)
    mean_energy: float
    discovery_rank: int

    @property
    def pixel_count(self) -> int:
        return len(self.pixels)


@dataclass(frozen=True)
class RegionSet:
    """All identified regions for one image plus the top-N selection order."""

    image_id: str
    regions: list[Region]
    selected: list[int]


@dataclass(frozen=True)
class RegionalFeatures:
    """min(N, H) x K matrix; row t aggregates the t-th selected region."""

    image_id: str
    matrix: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.matrix, dtype=np.float64))
        if m.ndim != 2:
            raise InputError(f"feature matrix must be 2-D, got {m.shape}")
        if m.size and not np.isfinite(m).all():
            raise InputError("feature matrix contains non-finite entries")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)


def _channel_edges(a, mask, tol, offsets):
    """Same-channel neighbour pairs passing the similarity predicate.

    ``offsets`` is a list of (di, dj) shifts; returns two flat-index arrays.
    """
    k, y, x = a.shape
    flat = np.arange(k * y * x).reshape(k, y, x)
    tol3 = tol[:, None, None]
    us, vs = [], []
    for di, dj in offsets:
        a_src, a_dst = a[:, : y - di, :], a[:, di:, :]
        m_src, m_dst = mask[:, : y - di, :], mask[:, di:, :]
        f_src, f_dst = flat[:, : y - di, :], flat[:, di:, :]
        if dj > 0:
            a_src, m_src, f_src = a_src[:, :, :-dj], m_src[:, :, :-dj], f_src[:, :, :-dj]
            a_dst, m_dst, f_dst = a_dst[:, :, dj:], m_dst[:, :, dj:], f_dst[:, :, dj:]
        elif dj < 0:
            a_src, m_src, f_src = a_src[:, :, -dj:], m_src[:, :, -dj:], f_src[:, :, -dj:]
            a_dst, m_dst, f_dst = a_dst[:, :, :dj], m_dst[:, :, :dj], f_dst[:, :, :dj]
        ok = m_src & m_dst & (np.abs(a_src - a_dst) <= tol3)
        us.append(f_src[ok])
        vs.append(f_dst[ok])
    if not us:
        return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
    return np.concatenate(us), np.concatenate(vs)


def extract_regions(t: FeatureTensor, cfg: RegionConfig) -> RegionSet:
    """Identify per-channel regions and select the top-N by mean energy.

    A cell participates only if its activation exceeds the floor. The join
    tolerance is relative to the channel's above-floor value range; a channel
    with zero range collapses to a single region of all its above-floor cells.
    Selection ties break on larger pixel count, then lower channel, then scan
    order.
    """
    a = t.data.astype(np.float64)
    k, y, x = a.shape
    mask = a > cfg.activation_floor

    has_cells = mask.any(axis=(1, 2))
    neg = np.where(mask, a, -np.inf)
    pos = np.where(mask, a, np.inf)
    cmax = np.where(has_cells, neg.max(axis=(1, 2)), 0.0)
    cmin = np.where(has_cells, pos.min(axis=(1, 2)), 0.0)
    tol = cfg.similarity_tau * (cmax - cmin)
    constant = has_cells & (cmax == cmin)

    if cfg.neighbourhood == 4:
        offsets = [(0, 1), (1, 0)]
    else:
        offsets = [(0, 1), (1, 0), (1, 1), (1, -1)]

    # Exclude constant channels from the graph; they are merged wholesale below.
    graph_mask = mask & ~constant[:, None, None]
    n = k * y * x
    u, v = _channel_edges(a, graph_mask, tol, offsets)
    graph = coo_matrix((np.ones(len(u), dtype=np.int8), (u, v)), shape=(n, n))
    _, comp = connected_components(graph.tocsr(), directed=False)

    # Constant channels: one region per channel spanning every above-floor cell.
    comp = comp.astype(np.int64)
    const_channels = np.flatnonzero(constant)
    if const_channels.size:
        chan_of = np.repeat(np.arange(k), y * x)
        flat_const = constant[chan_of] & mask.ravel()
        comp[flat_const] = n + chan_of[flat_const]

    flat_cells = np.flatnonzero(mask.ravel())  # scan order: channel, row, col
    if flat_cells.size == 0:
        return RegionSet(image_id=t.image_id, regions=[], selected=[])
    cell_comp = comp[flat_cells]

    # Region ids ordered by first occurrence in scan order.
    uniq, first_idx = np.unique(cell_comp, return_index=True)
    order = np.argsort(first_idx, kind="stable")
    comp_to_region = {int(uniq[o]): rid for rid, o in enumerate(order)}
    region_ids = np.array([comp_to_region[int(c)] for c in cell_comp], dtype=np.int64)
    h = len(uniq)

    values = a.ravel()[flat_cells]
    counts = np.bincount(region_ids, minlength=h)
    sums = np.bincount(region_ids, weights=values, minlength=h)
    means = sums / counts

    rows = (flat_cells % (y * x)) // x
    cols = flat_cells % x
    chans = flat_cells // (y * x)

    sort_by_region = np.argsort(region_ids, kind="stable")
    starts = np.searchsorted(region_ids[sort_by_region], np.arange(h))
    r_sorted, c_sorted = rows[sort_by_region], cols[sort_by_region]
    row_min = np.minimum.reduceat(r_sorted, starts)
    row_max = np.maximum.reduceat(r_sorted, starts)
    col_min = np.minimum.reduceat(c_sorted, starts)
    col_max = np.maximum.reduceat(c_sorted, starts)
    chan_of_region = chans[sort_by_region][starts]

    bounds = np.append(starts, len(sort_by_region))
    regions = []
    for rid in range(h):
        lo, hi = bounds[rid], bounds[rid + 1]
        px = frozenset(
            (int(r), int(c)) for r, c in zip(r_sorted[lo:hi], c_sorted[lo:hi])
        )
        regions.append(
            Region(
                channel=int(chan_of_region[rid]),
                pixels=px,
                bbox=(int(row_min[rid]), int(row_max[rid]), int(col_min[rid]), int(col_max[rid])),
                mean_energy=float(means[rid]),
                discovery_rank=rid,
            )
        )

    ranking = np.lexsort((np.arange(h), chan_of_region, -counts, -means))
    selected = [int(i) for i in ranking[: min(cfg.top_n, h)]]
    return RegionSet(image_id=t.image_id, regions=regions, selected=selected)


def aggregate_regions(
    t: FeatureTensor, rs: RegionSet, mode: str = "bbox"
) -> RegionalFeatures:
    """Sum K-dimensional local descriptors under each selected region.

    Aggregation spans all channels regardless of the region's source channel.
    ``mode="mask"`` restricts the sum to the region's exact pixels instead of
    its bounding box.
    """
    if rs.image_id != t.image_id:
        raise InputError(f"region set {rs.image_id!r} does not match tensor {t.image_id!r}")
    if mode not in ("bbox", "mask"):
        raise InputError(f"unknown aggregation mode {mode!r}")
    a = t.data.astype(np.float64)
    k = a.shape[0]
    out = np.zeros((len(rs.selected), k), dtype=np.float64)
    for row, idx in enumerate(rs.selected):
        region = rs.regions[idx]
        if mode == "bbox":
            r0, r1, c0, c1 = region.bbox
            out[row] = a[:, r0 : r1 + 1, c0 : c1 + 1].sum(axis=(1, 2))
        else:
            pr = np.fromiter((p[0] for p in sorted(region.pixels)), dtype=np.intp)
            pc = np.fromiter((p[1] for p in sorted(region.pixels)), dtype=np.intp)
            out[row] = a[:, pr, pc].sum(axis=1)
    return RegionalFeatures(image_id=t.image_id, matrix=out)


def dump_regions_json(rs: RegionSet, path: str | Path, selected_only: bool = True) -> None:
    """Debug overlay dump: channel, bbox, mean energy, pixel count per region."""
    indices = rs.selected if selected_only else range(len(rs.regions))
    items = []
    for idx in indices:
        r = rs.regions[idx]
        items.append(
            {
                "channel": r.channel,
                "bbox": list(r.bbox),
                "mean_energy": r.mean_energy,
                "pixel_count": r.pixel_count,
            }
        )
    Path(path).write_text(json.dumps({"image_id": rs.image_id, "regions": items}, indent=2) + "\n")
