"""Regional vocabulary: K-means training, quantization and codebook files.

Training is a fully pinned Lloyd iteration so that identical inputs and seed
always reproduce the codebook byte for byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix

from .errors import ConfigError, FormatError, InputError, IoError, TrainError
from .regions import RegionalFeatures

_CB_MAGIC = b"RVCB1"
_ASSIGN_CHUNK = 8192


@dataclass(frozen=True)
class KMeansConfig:
    clusters: int
    seed: int = 0
    max_iters: int = 100
    tol: float = 1e-4  # mean centroid displacement
    init: str = "plus-plus"  # "plus-plus" | "random-points"
    restarts: int = 1

    def __post_init__(self):
        if self.clusters < 1:
            raise ConfigError(f"clusters must be >= 1, got {self.clusters}")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed must fit in 64 unsigned bits")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.tol < 0:
            raise ConfigError("tol must be >= 0")
        if self.init not in ("plus-plus", "random-points"):
            raise ConfigError(f"unknown init {self.init!r}")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")


@dataclass(frozen=True)
class TrainMeta:
    seed: int
    iterations_run: int
    final_inertia: float
    inertia_history: tuple[float, ...] = ()


@dataclass(frozen=True)
class Codebook:
    centroids: np.ndarray  # (V, K) float64
    train_meta: TrainMeta

    def __post_init__(self):
        c = np.ascontiguousarray(np.asarray(self.centroids, dtype=np.float64))
        if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
            raise TrainError(f"centroids must be a non-empty 2-D matrix, got {c.shape}")
        if not np.isfinite(c).all():
            raise TrainError("centroids contain non-finite entries")
        if len(np.unique(c, axis=0)) != c.shape[0]:
            raise TrainError("codebook contains duplicate centroids")
        c.flags.writeable = False
        object.__setattr__(self, "centroids", c)

    @property
    def clusters(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def _assign(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per row; ties resolve to the lowest index.

    Returns (labels, squared distance to the assigned centroid). Chunked so
    the (rows x V) distance block stays bounded.
    """
    n = x.shape[0]
    labels = np.empty(n, dtype=np.int64)
    d2min = np.empty(n, dtype=np.float64)
    c2 = np.einsum("vk,vk->v", centroids, centroids)
    for start in range(0, n, _ASSIGN_CHUNK):
        block = x[start : start + _ASSIGN_CHUNK]
        d2 = np.einsum("nk,nk->n", block, block)[:, None] + c2[None, :] - 2.0 * (block @ centroids.T)
        np.maximum(d2, 0.0, out=d2)
        idx = np.argmin(d2, axis=1)
        labels[start : start + _ASSIGN_CHUNK] = idx
        d2min[start : start + _ASSIGN_CHUNK] = np.take_along_axis(d2, idx[:, None], axis=1)[:, 0]
    return labels, d2min


def _init_centroids(x: np.ndarray, v: int, rng: np.random.Generator, init: str) -> np.ndarray:
    n = x.shape[0]
    if init == "random-points":
        idx = rng.choice(n, size=v, replace=False)
        return x[idx].copy()
    # plus-plus: D^2-weighted seeding.
    centroids = np.empty((v, x.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = x[first]
    d2 = np.einsum("nk,nk->n", x - centroids[0], x - centroids[0])
    for i in range(1, v):
        total = d2.sum()
        if total <= 0.0:
            # All remaining mass at already-chosen points: fall back to uniform.
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centroids[i] = x[pick]
        nd = np.einsum("nk,nk->n", x - centroids[i], x - centroids[i])
        np.minimum(d2, nd, out=d2)
    return centroids


def _lloyd(x: np.ndarray, cfg: KMeansConfig, rng: np.random.Generator):
    v = cfg.clusters
    centroids = _init_centroids(x, v, rng, cfg.init)
    history: list[float] = []
    iterations = 0
    for _ in range(cfg.max_iters):
        labels, d2min = _assign(x, centroids)
        inertia = float(d2min.sum())
        assert not history or inertia <= history[-1] + 1e-9, "inertia increased"
        history.append(inertia)
        iterations += 1

        counts = np.bincount(labels, minlength=v)
        # Sparse scatter-add: much faster than np.add.at and order-deterministic.
        scatter = coo_matrix(
            (np.ones(len(labels)), (labels, np.arange(len(labels)))), shape=(v, len(labels))
        )
        sums = np.asarray(scatter.tocsr() @ x)
        new_centroids = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], centroids)

        # Re-seed each empty cluster with the point currently farthest from
        # its assigned centroid; claimed points cannot be picked twice.
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            d2pick = d2min.copy()
            for u in empties:
                far = int(np.argmax(d2pick))
                new_centroids[u] = x[far]
                d2pick[far] = -1.0
        displacement = float(np.mean(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if displacement < cfg.tol or displacement == 0.0:
            break
    _, d2final = _assign(x, centroids)
    return centroids, iterations, float(d2final.sum()), history


def train_codebook(features: list[RegionalFeatures], cfg: KMeansConfig) -> Codebook:
    """Cluster pooled regional features into the V-word vocabulary.

    Deterministic given (inputs, seed); with restarts the lowest final
    inertia wins.
    """
    if not features:
        raise TrainError("no training features supplied")
    dims = {f.matrix.shape[1] for f in features}
    if len(dims) != 1:
        raise InputError(f"inconsistent feature dimensionality across inputs: {sorted(dims)}")
    x = np.concatenate([f.matrix for f in features], axis=0)
    if x.shape[0] < cfg.clusters:
        raise TrainError(
            f"insufficient features: {x.shape[0]} rows for {cfg.clusters} clusters"
        )

    best = None
    for restart in range(cfg.restarts):
        rng = np.random.default_rng([cfg.seed, restart])
        centroids, iterations, inertia, history = _lloyd(x, cfg, rng)
        if best is None or inertia < best[2]:
            best = (centroids, iterations, inertia, history)
    centroids, iterations, inertia, history = best
    meta = TrainMeta(
        seed=cfg.seed,
        iterations_run=iterations,
        final_inertia=inertia,
        inertia_history=tuple(history),
    )
    return Codebook(centroids=centroids, train_meta=meta)


def quantize(f: RegionalFeatures, cb: Codebook) -> np.ndarray:
    """Label each regional feature with its nearest centroid index."""
    if f.matrix.shape[1] != cb.dim:
        raise InputError(
            f"feature dim {f.matrix.shape[1]} does not match codebook dim {cb.dim}"
        )
    labels, _ = _assign(f.matrix, cb.centroids)
    return labels


def save_codebook(cb: Codebook, path: str | Path) -> None:
    """Binary centroid file plus a JSON sidecar with the training metadata."""
    path = Path(path)
    payload = cb.centroids.astype("<f4").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(_CB_MAGIC)
            fh.write(struct.pack("<IIQ", cb.clusters, cb.dim, cb.train_meta.seed))
            fh.write(payload)
        sidecar = {
            "seed": cb.train_meta.seed,
            "iterations_run": cb.train_meta.iterations_run,
            "final_inertia": cb.train_meta.final_inertia,
            "inertia_history": list(cb.train_meta.inertia_history),
        }
        path.with_suffix(path.suffix + ".meta.json").write_text(
            json.dumps(sidecar, indent=2) + "\n"
        )
    except OSError as e:
        raise IoError(f"cannot write codebook {path}: {e}") from e


def load_codebook(path: str | Path) -> Codebook:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IoError(f"cannot read codebook {path}: {e}") from e
    if len(raw) < len(_CB_MAGIC) + 16 or raw[: len(_CB_MAGIC)] != _CB_MAGIC:
        raise FormatError(f"{path}: not a codebook file")
    v, k, seed = struct.unpack("<IIQ", raw[5:21])
    expected = 21 + 4 * v * k
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    centroids = np.frombuffer(raw[21:], dtype="<f4").reshape(v, k).astype(np.float64)

    meta_path = path.with_suffix(path.suffix + ".meta.json")
    meta = TrainMeta(seed=seed, iterations_run=0, final_inertia=float("nan"))
    if meta_path.exists():
        doc = json.loads(meta_path.read_text())
        meta = TrainMeta(
            seed=doc.get("seed", seed),
            iterations_run=doc.get("iterations_run", 0),
            final_inertia=doc.get("final_inertia", float("nan")),
            inertia_history=tuple(doc.get("inertia_history", ())),
        )
    return Codebook(centroids=centroids, train_meta=meta)
