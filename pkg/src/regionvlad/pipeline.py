"""Convenience composition of the per-image pipeline stages."""

from __future__ import annotations

from .codebook import Codebook, quantize
from .regions import RegionConfig, RegionalFeatures, aggregate_regions, extract_regions
from .tensor_io import FeatureTensor
from .vlad import VladConfig, VladDescriptor, encode_vlad


def extract_features(t: FeatureTensor, region_cfg: RegionConfig) -> RegionalFeatures:
    """Regions -> top-N selection -> aggregated regional feature matrix."""
    rs = extract_regions(t, region_cfg)
    return aggregate_regions(t, rs, mode=region_cfg.aggregation)


def encode_image(
    t: FeatureTensor,
    cb: Codebook,
    region_cfg: RegionConfig,
    vlad_cfg: VladConfig,
) -> VladDescriptor:
    """Full tensor -> VLAD descriptor path for one image."""
    f = extract_features(t, region_cfg)
    labels = quantize(f, cb)
    return encode_vlad(f, labels, cb, vlad_cfg)
