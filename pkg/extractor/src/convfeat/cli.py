"""Command line: convfeat --weights W --output-dir D image [image ...]"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .extractor import ExtractorConfig, ExtractorError, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convfeat",
        description="Export post-activation conv-layer feature tensors from images.",
    )
    parser.add_argument("images", nargs="+", type=Path)
    parser.add_argument("--weights", type=Path, required=True, help="model checkpoint (.pth/.pth.tar)")
    parser.add_argument("--output-dir", type=Path, required=True)
    parser.add_argument("--layer", default="conv3", help="conv1..conv5 (default conv3)")
    parser.add_argument("--resize", type=int, default=256)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--batch-size", type=int, default=8)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExtractorConfig(
            weights=args.weights,
            output_dir=args.output_dir,
            layer=args.layer,
            resize=args.resize,
            device=args.device,
            batch_size=args.batch_size,
        )
        result = extract(args.images, cfg)
    except ExtractorError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"manifest={result.manifest_path} tensors={len(result.tensor_paths)} skipped={len(result.skipped)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
