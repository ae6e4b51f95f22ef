"""Per-image VLAD construction and the binary descriptor store.

For each vocabulary cluster the residuals of its assigned regional features
are summed, power-normalized elementwise (signed |v|^gamma) and then
L2-normalized per cluster. Clusters with no assigned features keep exact
zero rows so every descriptor has fixed V x K shape.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .codebook import Codebook
from .errors import ConfigError, FormatError, InputError, IoError
from .regions import RegionalFeatures

_STORE_MAGIC = b"RVLD1"


@dataclass(frozen=True)
class VladConfig:
    gamma: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")


@dataclass(frozen=True)
class VladDescriptor:
    """V x K matrix of per-cluster normalized residuals.

    Rows are unit vectors or exactly zero. Kept in float64 in memory;
    the store file quantizes to float32.
    """

    image_id: str
    matrix: np.ndarray
    gamma: float

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.matrix, dtype=np.float64))
        if m.ndim != 2:
            raise InputError(f"descriptor must be 2-D, got shape {m.shape}")
        if not np.isfinite(m).all():
            raise InputError("descriptor contains non-finite entries")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def clusters(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def nonzero_rows(self) -> int:
        return int(np.any(self.matrix != 0.0, axis=1).sum())


def encode_vlad(
    f: RegionalFeatures, labels: np.ndarray, cb: Codebook, cfg: VladConfig
) -> VladDescriptor:
    """Accumulate residuals per cluster, then power- and L2-normalize.

    Residuals are formed feature-by-feature before summation so that
    features equal to their centroid contribute exact zeros.
    """
    labels = np.asarray(labels)
    if labels.shape != (f.matrix.shape[0],):
        raise InputError(
            f"labels shape {labels.shape} does not match {f.matrix.shape[0]} features"
        )
    if f.matrix.shape[0] and (labels.min() < 0 or labels.max() >= cb.clusters):
        raise InputError("label index out of codebook range")
    if f.matrix.shape[1] != cb.dim:
        raise InputError(f"feature dim {f.matrix.shape[1]} != codebook dim {cb.dim}")

    raw = np.zeros((cb.clusters, cb.dim), dtype=np.float64)
    if f.matrix.shape[0]:
        residuals = f.matrix - cb.centroids[labels]
        np.add.at(raw, labels, residuals)

    v = np.sign(raw) * np.abs(raw) ** cfg.gamma
    norms = np.sqrt(np.einsum("uk,uk->u", v, v))
    nonzero = norms > 0.0
    v[nonzero] /= norms[nonzero, None]
    return VladDescriptor(image_id=f.image_id, matrix=v, gamma=cfg.gamma)


class VladStore:
    """Ordered collection of descriptors sharing one (V, K) shape."""

    def __init__(self, ids: list[str], data: np.ndarray, gamma: float = 0.5):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 3:
            raise InputError(f"store data must be (count, V, K), got {data.shape}")
        if len(ids) != data.shape[0]:
            raise InputError(f"{len(ids)} ids for {data.shape[0]} descriptor records")
        if len(set(ids)) != len(ids):
            raise InputError("duplicate image ids in store")
        self.ids = list(ids)
        self.data = data
        self.gamma = gamma

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def clusters(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def descriptor(self, index: int) -> VladDescriptor:
        return VladDescriptor(
            image_id=self.ids[index], matrix=self.data[index], gamma=self.gamma
        )

    @classmethod
    def from_descriptors(cls, descriptors: list[VladDescriptor]) -> "VladStore":
        if not descriptors:
            raise InputError("cannot build a store from zero descriptors")
        shapes = {d.matrix.shape for d in descriptors}
        if len(shapes) != 1:
            raise InputError(f"descriptors disagree on shape: {sorted(shapes)}")
        data = np.stack([d.matrix for d in descriptors])
        return cls([d.image_id for d in descriptors], data, gamma=descriptors[0].gamma)


def save_store(store: VladStore, path: str | Path) -> None:
    """Write the store: header (magic, count, V, K) then per-image records."""
    try:
        with open(path, "wb") as fh:
            fh.write(_STORE_MAGIC)
            fh.write(struct.pack("<III", len(store), store.clusters, store.dim))
            for i, image_id in enumerate(store.ids):
                id_bytes = image_id.encode("utf-8")
                fh.write(struct.pack("<H", len(id_bytes)))
                fh.write(id_bytes)
                fh.write(store.data[i].astype("<f4").tobytes())
    except OSError as e:
        raise IoError(f"cannot write store {path}: {e}") from e


def iter_store(path: str | Path) -> Iterator[tuple[str, np.ndarray]]:
    """Stream (image_id, V x K float32 matrix) records without loading all."""
    path = Path(path)
    try:
        fh = open(path, "rb")
    except OSError as e:
        raise IoError(f"cannot read store {path}: {e}") from e
    with fh:
        head = fh.read(len(_STORE_MAGIC) + 12)
        if len(head) < len(_STORE_MAGIC) + 12 or head[: len(_STORE_MAGIC)] != _STORE_MAGIC:
            raise FormatError(f"{path}: not a VLAD store file")
        count, v, k = struct.unpack("<III", head[len(_STORE_MAGIC) :])
        record_bytes = 4 * v * k
        for _ in range(count):
            lhdr = fh.read(2)
            if len(lhdr) != 2:
                raise FormatError(f"{path}: truncated record header")
            (idlen,) = struct.unpack("<H", lhdr)
            id_bytes = fh.read(idlen)
            payload = fh.read(record_bytes)
            if len(id_bytes) != idlen or len(payload) != record_bytes:
                raise FormatError(f"{path}: truncated record")
            matrix = np.frombuffer(payload, dtype="<f4").reshape(v, k)
            yield id_bytes.decode("utf-8"), matrix


def load_store(path: str | Path) -> VladStore:
    ids: list[str] = []
    mats: list[np.ndarray] = []
    v = k = 0
    for image_id, matrix in iter_store(path):
        ids.append(image_id)
        mats.append(matrix.astype(np.float64))
        v, k = matrix.shape
    if not ids:
        # Preserve declared shape for empty stores.
        path = Path(path)
        raw = path.read_bytes()
        _, v, k = struct.unpack("<III", raw[len(_STORE_MAGIC) : len(_STORE_MAGIC) + 12])
        return VladStore([], np.empty((0, v, k), dtype=np.float64))
    return VladStore(ids, np.stack(mats))
