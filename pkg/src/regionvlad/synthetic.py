"""Synthetic activation tensors for tests, demos and the timing harness.

The vocabulary corpus in production comes from user-supplied imagery; this
generator stands in wherever real CNN features are unnecessary.
"""

from __future__ import annotations

import numpy as np

from .tensor_io import FeatureTensor


def random_tensor(
    rng: np.random.Generator,
    image_id: str,
    channels: int = 32,
    height: int = 16,
    width: int = 16,
    zero_fraction: float = 0.3,
) -> FeatureTensor:
    """Non-negative activations with a zeroed-out background fraction.

    Zero cells sit below the default activation floor, giving every channel
    region structure instead of one wall-to-wall component.
    """
    data = rng.uniform(0.0, 1.0, size=(channels, height, width))
    data[rng.uniform(size=data.shape) < zero_fraction] = 0.0
    return FeatureTensor(image_id=image_id, data=data.astype(np.float32))


def random_tensors(
    count: int,
    seed: int,
    channels: int = 32,
    height: int = 16,
    width: int = 16,
    zero_fraction: float = 0.3,
    id_prefix: str = "img",
) -> list[FeatureTensor]:
    rng = np.random.default_rng(seed)
    return [
        random_tensor(rng, f"{id_prefix}{i:04d}", channels, height, width, zero_fraction)
        for i in range(count)
    ]


def sparse_tensor(
    rng: np.random.Generator,
    image_id: str,
    channels: int = 32,
    height: int = 16,
    width: int = 16,
    active_fraction: float = 0.005,
    scale: float = 0.2,
) -> FeatureTensor:
    """Nearly blank tensor: a handful of weak activations.

    Produces images with very few, low-energy regions, i.e. places that
    should score poorly against any reference.
    """
    data = np.zeros((channels, height, width))
    active = rng.uniform(size=data.shape) < active_fraction
    data[active] = rng.uniform(0.0, scale, size=int(active.sum()))
    return FeatureTensor(image_id=image_id, data=data.astype(np.float32))


def noisy_variant(
    t: FeatureTensor, rng: np.random.Generator, sigma_fraction: float, image_id: str
) -> FeatureTensor:
    """Additive Gaussian noise with sigma as a fraction of the value range."""
    data = t.data.astype(np.float64)
    value_range = float(data.max() - data.min())
    sigma = sigma_fraction * value_range
    noisy = data + rng.normal(0.0, sigma, size=data.shape)
    return FeatureTensor(image_id=image_id, data=noisy.astype(np.float32))


def noisy_variants(
    tensors: list[FeatureTensor], seed: int, sigma_fraction: float, id_prefix: str = "ref"
) -> list[FeatureTensor]:
    rng = np.random.default_rng(seed)
    return [
        noisy_variant(t, rng, sigma_fraction, f"{id_prefix}{i:04d}")
        for i, t in enumerate(tensors)
    ]
