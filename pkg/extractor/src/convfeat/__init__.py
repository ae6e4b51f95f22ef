"""Conv-layer activation export for the place retrieval engine."""

from .extractor import ExtractionResult, ExtractorConfig, ExtractorError, build_model, extract

__version__ = "0.1.0"

__all__ = [
    "ExtractionResult",
    "ExtractorConfig",
    "ExtractorError",
    "build_model",
    "extract",
]
