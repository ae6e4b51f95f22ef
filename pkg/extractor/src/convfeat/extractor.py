"""Export post-activation conv-layer tensors from a scene-centric AlexNet.

Writes one ``.npy`` v1.0 float32 tensor of shape (K, Y, X) per image plus a
JSON manifest, the exact file formats the retrieval engine consumes. The
default target is the conv3 layer of AlexNet trained on Places365; the
pretrained checkpoint must be supplied as a local file.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from torchvision.models import alexnet

# Slice end (exclusive) into AlexNet.features for each post-ReLU conv output.
_ALEXNET_LAYERS = {
    "conv1": 2,
    "conv2": 5,
    "conv3": 8,
    "conv4": 10,
    "conv5": 12,
}

# Preprocessing recipe published with the Places365 PyTorch checkpoints.
_MEAN = (0.485, 0.456, 0.406)
_STD = (0.229, 0.224, 0.225)
_PLACES365_CLASSES = 365


class ExtractorError(Exception):
    pass


@dataclass(frozen=True)
class ExtractorConfig:
    weights: Path
    output_dir: Path
    model: str = "alexnet-places365"
    layer: str = "conv3"
    resize: int = 256
    crop: int = 224  # AlexNet native input
    device: str = "cpu"
    batch_size: int = 8
    manifest_name: str = "manifest.json"

    def __post_init__(self):
        if self.model != "alexnet-places365":
            raise ExtractorError(f"unknown model {self.model!r}")
        if self.layer not in _ALEXNET_LAYERS:
            raise ExtractorError(
                f"layer {self.layer!r} does not exist; choose from {sorted(_ALEXNET_LAYERS)}"
            )
        if self.crop > self.resize:
            raise ExtractorError("crop size cannot exceed resize size")
        object.__setattr__(self, "weights", Path(self.weights))
        object.__setattr__(self, "output_dir", Path(self.output_dir))


def _load_state_dict(path: Path) -> dict:
    if not path.exists():
        raise ExtractorError(f"weights file not found: {path}")
    checkpoint = torch.load(path, map_location="cpu", weights_only=True)
    state = checkpoint.get("state_dict", checkpoint) if isinstance(checkpoint, dict) else checkpoint
    if not isinstance(state, dict):
        raise ExtractorError(f"unrecognized checkpoint layout in {path}")
    # Checkpoints trained under DataParallel carry a "module." prefix.
    return {k.removeprefix("module."): v for k, v in state.items()}


def build_model(cfg: ExtractorConfig) -> torch.nn.Module:
    """AlexNet truncated after the configured layer's ReLU, in eval mode."""
    net = alexnet(weights=None, num_classes=_PLACES365_CLASSES)
    state = _load_state_dict(cfg.weights)
    try:
        net.load_state_dict(state, strict=True)
    except RuntimeError as e:
        raise ExtractorError(f"weights do not match the AlexNet architecture: {e}") from e
    trunk = net.features[: _ALEXNET_LAYERS[cfg.layer]]
    trunk.eval()
    return trunk.to(cfg.device)


def preprocess(image: Image.Image, cfg: ExtractorConfig) -> torch.Tensor:
    """Resize to a square, center-crop to the native input, normalize."""
    image = image.convert("RGB").resize((cfg.resize, cfg.resize), Image.BILINEAR)
    left = (cfg.resize - cfg.crop) // 2
    image = image.crop((left, left, left + cfg.crop, left + cfg.crop))
    arr = np.asarray(image, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(_MEAN, dtype=np.float32)) / np.asarray(_STD, dtype=np.float32)
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def _save_npy(path: Path, tensor: np.ndarray) -> None:
    arr = np.ascontiguousarray(tensor, dtype="<f4")
    np.save(path, arr)


@dataclass
class ExtractionResult:
    manifest_path: Path
    tensor_paths: list[Path] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)


def extract(images: list[Path | str], cfg: ExtractorConfig) -> ExtractionResult:
    """Run each decodable image through the trunk and write tensor + manifest.

    Undecodable images are skipped with a warning and listed in the
    ``<manifest>.skipped.json`` sidecar; frame indices follow emission order.
    """
    if not images:
        raise ExtractorError("no input images given")
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    trunk = build_model(cfg)

    loaded: list[tuple[str, torch.Tensor]] = []
    skipped: list[str] = []
    for pos, raw in enumerate(images):
        path = Path(raw)
        try:
            with Image.open(path) as img:
                tensor = preprocess(img, cfg)
        except (OSError, UnidentifiedImageError) as e:
            warnings.warn(f"skipping undecodable image {path}: {e}", stacklevel=2)
            skipped.append(str(path))
            continue
        loaded.append((f"{pos:06d}_{path.stem}", tensor))

    entries = []
    tensor_paths = []
    with torch.no_grad():
        for start in range(0, len(loaded), cfg.batch_size):
            batch = loaded[start : start + cfg.batch_size]
            stacked = torch.stack([t for _, t in batch]).to(cfg.device)
            out = trunk(stacked).cpu().numpy().astype(np.float32)
            for offset, (image_id, _) in enumerate(batch):
                frame = start + offset
                tensor_path = cfg.output_dir / f"{image_id}.npy"
                _save_npy(tensor_path, out[offset])
                tensor_paths.append(tensor_path)
                entries.append({"id": image_id, "tensor": tensor_path.name, "frame": frame})

    manifest_path = cfg.output_dir / cfg.manifest_name
    manifest = {"name": cfg.output_dir.name, "queries": entries, "references": []}
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    if skipped:
        sidecar = manifest_path.with_suffix(manifest_path.suffix + ".skipped.json")
        sidecar.write_text(json.dumps({"skipped": skipped}, indent=2) + "\n")
    return ExtractionResult(manifest_path=manifest_path, tensor_paths=tensor_paths, skipped=skipped)
