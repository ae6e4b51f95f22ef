"""Feature tensor and dataset manifest I/O.

Tensors travel as single-array ".npy" v1.0 files (little-endian float32,
C-order, shape ``(K, Y, X)``); manifests are JSON documents. Both formats
are the only coupling surface between the engine and any feature extractor.
"""

from __future__ import annotations

import ast
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, InputError, IoError, ManifestError

_NPY_MAGIC = b"\x93NUMPY"
_NPY_VERSION = b"\x01\x00"
_HEADER_ALIGN = 64


@dataclass(frozen=True)
class FeatureTensor:
    """One image's activation volume at one convolutional layer.

    ``data`` is a read-only float32 array of shape (channels, height, width).
    """

    image_id: str
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise InputError(f"tensor shape must be 3 positive dims, got {arr.shape}")
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def _format_header(shape: tuple[int, int, int]) -> bytes:
    dict_str = "{'descr': '<f4', 'fortran_order': False, 'shape': %s, }" % (
        repr(tuple(int(s) for s in shape)),
    )
    header = dict_str.encode("latin1")
    # Pad with spaces, terminate with newline, align data start to 64 bytes.
    unpadded = len(_NPY_MAGIC) + len(_NPY_VERSION) + 2 + len(header) + 1
    pad = (-unpadded) % _HEADER_ALIGN
    return header + b" " * pad + b"\n"


def save_tensor(t: FeatureTensor, path: str | Path) -> None:
    """Write ``t`` so that :func:`load_tensor` reproduces it bit-exactly."""
    header = _format_header(t.data.shape)
    payload = np.ascontiguousarray(t.data, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(_NPY_MAGIC)
            fh.write(_NPY_VERSION)
            fh.write(struct.pack("<H", len(header)))
            fh.write(header)
            fh.write(payload)
    except OSError as e:
        raise IoError(f"cannot write tensor file {path}: {e}") from e


def load_tensor(path: str | Path, image_id: str | None = None) -> FeatureTensor:
    """Read a tensor file, validating the container and value finiteness.

    The image id defaults to the file stem.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IoError(f"cannot read tensor file {path}: {e}") from e

    if len(raw) < 10 or raw[:6] != _NPY_MAGIC:
        raise FormatError(f"{path}: not an npy file (bad magic)")
    if raw[6:8] != _NPY_VERSION:
        raise FormatError(f"{path}: unsupported npy version {raw[6]}.{raw[7]}")
    (hlen,) = struct.unpack("<H", raw[8:10])
    if len(raw) < 10 + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = ast.literal_eval(raw[10 : 10 + hlen].decode("latin1"))
    except (ValueError, SyntaxError) as e:
        raise FormatError(f"{path}: unparsable header: {e}") from e
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header is not a dict")
    if header.get("descr") != "<f4":
        raise FormatError(f"{path}: dtype mismatch, expected '<f4' got {header.get('descr')!r}")
    if header.get("fortran_order") is not False:
        raise FormatError(f"{path}: fortran_order must be False")
    shape = header.get("shape")
    if (
        not isinstance(shape, tuple)
        or len(shape) != 3
        or not all(isinstance(s, int) and s > 0 for s in shape)
    ):
        raise FormatError(f"{path}: shape must be 3 positive ints, got {shape!r}")

    count = shape[0] * shape[1] * shape[2]
    payload = raw[10 + hlen :]
    if len(payload) != 4 * count:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {4 * count}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(shape)
    finite = np.isfinite(data)
    if not finite.all():
        idx = int(np.argmin(finite.ravel()))
        raise DataError(f"{path}: non-finite value at flat index {idx}", index=idx)
    return FeatureTensor(image_id=image_id or path.stem, data=data)


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    tensor_path: Path
    frame: int


@dataclass(frozen=True)
class DatasetManifest:
    """Queries, references and ground truth for one dataset.

    ``pairs`` holds the materialized admissible (query_index, reference_index)
    set; in tolerance mode it is derived from the per-entry frame indices.
    """

    name: str
    queries: list[ManifestEntry]
    references: list[ManifestEntry]
    gt_mode: str  # "tolerance" | "pairs" | "none"
    tolerance: int | None = None
    pairs: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def admissible(self, query_index: int) -> frozenset[int]:
        """Reference indices that count as correct for this query."""
        return frozenset(r for q, r in self.pairs if q == query_index)

    def has_ground_truth(self, query_index: int) -> bool:
        return any(q == query_index for q, _ in self.pairs)


def _parse_entries(items, tag: str, base: Path) -> list[ManifestEntry]:
    entries = []
    for pos, item in enumerate(items):
        if not isinstance(item, dict):
            raise ManifestError(f"{tag}[{pos}] is not an object")
        try:
            image_id = item["id"]
            tensor = item["tensor"]
            frame = item["frame"]
        except KeyError as e:
            raise ManifestError(f"{tag}[{pos}] missing key {e}") from e
        if not isinstance(image_id, str) or not image_id:
            raise ManifestError(f"{tag}[{pos}] id must be a non-empty string")
        if not isinstance(frame, int) or isinstance(frame, bool):
            raise ManifestError(f"{tag}[{pos}] frame must be an integer")
        tensor_path = Path(tensor)
        if not tensor_path.is_absolute():
            tensor_path = base / tensor_path
        entries.append(ManifestEntry(image_id=image_id, tensor_path=tensor_path, frame=frame))
    return entries


def _materialize_tolerance(
    queries: list[ManifestEntry], references: list[ManifestEntry], tolerance: int
) -> frozenset[tuple[int, int]]:
    pairs = set()
    for qi, q in enumerate(queries):
        for ri, r in enumerate(references):
            if abs(q.frame - r.frame) <= tolerance:
                pairs.add((qi, ri))
    return frozenset(pairs)


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and validate a dataset manifest JSON document."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as e:
        raise IoError(f"cannot read manifest {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: top level must be an object")

    name = doc.get("name", path.stem)
    base = path.parent
    queries = _parse_entries(doc.get("queries", []), "queries", base)
    references = _parse_entries(doc.get("references", []), "references", base)

    seen: set[str] = set()
    for e in queries + references:
        if e.image_id in seen:
            raise ManifestError(f"{path}: duplicate image id {e.image_id!r}")
        seen.add(e.image_id)

    gt = doc.get("ground_truth")
    if gt is None:
        return DatasetManifest(name=name, queries=queries, references=references, gt_mode="none")
    if not isinstance(gt, dict) or "mode" not in gt:
        raise ManifestError(f"{path}: ground_truth must be an object with a mode")
    mode = gt["mode"]
    if mode == "tolerance":
        tol = gt.get("tolerance")
        if not isinstance(tol, int) or isinstance(tol, bool) or tol < 0:
            raise ManifestError(f"{path}: tolerance must be a non-negative integer")
        pairs = _materialize_tolerance(queries, references, tol)
        return DatasetManifest(
            name=name,
            queries=queries,
            references=references,
            gt_mode="tolerance",
            tolerance=tol,
            pairs=pairs,
        )
    if mode == "pairs":
        raw_pairs = gt.get("pairs")
        if not isinstance(raw_pairs, list):
            raise ManifestError(f"{path}: pairs mode requires a pairs list")
        pairs = set()
        for pos, qr in enumerate(raw_pairs):
            if not (isinstance(qr, list) and len(qr) == 2 and all(isinstance(v, int) for v in qr)):
                raise ManifestError(f"{path}: pairs[{pos}] must be [query_index, reference_index]")
            q, r = qr
            if not (0 <= q < len(queries)):
                raise ManifestError(f"{path}: pairs[{pos}] query index {q} out of range")
            if not (0 <= r < len(references)):
                raise ManifestError(f"{path}: pairs[{pos}] reference index {r} out of range")
            pairs.add((q, r))
        return DatasetManifest(
            name=name,
            queries=queries,
            references=references,
            gt_mode="pairs",
            pairs=frozenset(pairs),
        )
    raise ManifestError(f"{path}: unknown ground_truth mode {mode!r}")


def save_manifest(
    path: str | Path,
    name: str,
    queries: list[ManifestEntry],
    references: list[ManifestEntry] | None = None,
    gt_mode: str = "none",
    tolerance: int | None = None,
    pairs: list[tuple[int, int]] | None = None,
) -> None:
    """Write a manifest document; tensor paths are stored as given."""

    def enc(entries):
        return [
            {"id": e.image_id, "tensor": str(e.tensor_path), "frame": e.frame}
            for e in entries
        ]

    doc: dict = {"name": name, "queries": enc(queries), "references": enc(references or [])}
    if gt_mode == "tolerance":
        doc["ground_truth"] = {"mode": "tolerance", "tolerance": tolerance}
    elif gt_mode == "pairs":
        doc["ground_truth"] = {"mode": "pairs", "pairs": [list(p) for p in sorted(pairs or [])]}
    try:
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")
    except OSError as e:
        raise IoError(f"cannot write manifest {path}: {e}") from e
