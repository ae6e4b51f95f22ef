"""Visual place recognition by VLAD encoding of energy-ranked CNN regions."""

from .codebook import Codebook, KMeansConfig, load_codebook, quantize, save_codebook, train_codebook
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    InputError,
    IoError,
    ManifestError,
    RegionVladError,
    TrainError,
)
from .evaluator import PrCurve, TimingReport, pr_curve, recall_at_1, run_timing
from .matcher import (
    MatchResult,
    ThresholdReport,
    match_all,
    match_pair,
    retrieve,
    suggest_threshold,
    threshold_partition,
)
from .pipeline import encode_image, extract_features
from .regions import (
    Region,
    RegionConfig,
    RegionSet,
    RegionalFeatures,
    aggregate_regions,
    extract_regions,
)
from .tensor_io import (
    DatasetManifest,
    FeatureTensor,
    ManifestEntry,
    load_manifest,
    load_tensor,
    save_manifest,
    save_tensor,
)
from .vlad import VladConfig, VladDescriptor, VladStore, encode_vlad, load_store, save_store

__version__ = "0.1.0"

__all__ = [
    "Codebook",
    "ConfigError",
    "DataError",
    "DatasetManifest",
    "FeatureTensor",
    "FormatError",
    "InputError",
    "IoError",
    "KMeansConfig",
    "ManifestEntry",
    "ManifestError",
    "MatchResult",
    "PrCurve",
    "Region",
    "RegionConfig",
    "RegionSet",
    "RegionVladError",
    "RegionalFeatures",
    "ThresholdReport",
    "TimingReport",
    "TrainError",
    "VladConfig",
    "VladDescriptor",
    "VladStore",
    "aggregate_regions",
    "encode_image",
    "encode_vlad",
    "extract_features",
    "extract_regions",
    "load_codebook",
    "load_manifest",
    "load_store",
    "load_tensor",
    "match_all",
    "match_pair",
    "pr_curve",
    "quantize",
    "recall_at_1",
    "retrieve",
    "run_timing",
    "save_codebook",
    "save_manifest",
    "save_store",
    "save_tensor",
    "suggest_threshold",
    "threshold_partition",
    "train_codebook",
]
