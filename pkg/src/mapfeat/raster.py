"""Raster tiles, colour-threshold feature masks, entropy filtering and dataset splits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .color import FeatureClassConfig, cie76_distance, srgb_to_lab
from .quadkey import QuadKey

DEFAULT_TILE_SIZE = 512


class RasterError(ValueError):
    """Invalid tile geometry or channel layout."""


@dataclass(frozen=True, eq=False)
class RasterTile:
    """An 8-bit image tile, shape (height, width, channels), with its geo-reference."""

    pixels: np.ndarray
    geo: QuadKey = field(default_factory=lambda: QuadKey(0))
    ground_resolution: float = 1.0

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[0] == 0 or px.shape[1] == 0 or px.shape[2] == 0:
            raise RasterError(f"tile must be non-empty HxWxC, got shape {px.shape}")
        if px.dtype != np.uint8:
            if px.min() < 0 or px.max() > 255:
                raise RasterError("pixel samples must fit in 8 bits")
            px = px.astype(np.uint8)
        if not self.ground_resolution > 0:
            raise RasterError("ground_resolution must be > 0")
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def area_km2(self) -> float:
        return self.width * self.height * self.ground_resolution**2 / 1e6

    def with_pixels(self, pixels: np.ndarray) -> "RasterTile":
        return RasterTile(pixels, self.geo, self.ground_resolution)

    def __eq__(self, other):
        if not isinstance(other, RasterTile):
            return NotImplemented
        return (
            self.geo == other.geo
            and self.ground_resolution == other.ground_resolution
            and np.array_equal(self.pixels, other.pixels)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class FeatureMask:
    bits: np.ndarray
    class_name: str = ""

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise RasterError(f"mask must be 2-D, got shape {bits.shape}")
        bits = np.ascontiguousarray(bits.astype(bool))
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other):
        if not isinstance(other, FeatureMask):
            return NotImplemented
        return self.class_name == other.class_name and np.array_equal(self.bits, other.bits)

    __hash__ = None


def color_distance_map(pixels: np.ndarray, cfg: FeatureClassConfig) -> np.ndarray:
    """Per-pixel minimum CIE76 distance to any colour of ``cfg``.

    Maps carry few distinct colours, so Lab conversion runs on the unique set only.
    """
    flat = pixels.reshape(-1, 3)
    packed = (flat[:, 0].astype(np.uint32) << 16) | (flat[:, 1].astype(np.uint32) << 8) | flat[:, 2]
    uniq, inverse = np.unique(packed, return_inverse=True)
    rgb = np.stack([(uniq >> 16) & 255, (uniq >> 8) & 255, uniq & 255], axis=-1)
    lab = srgb_to_lab(rgb)
    dist = cie76_distance(lab[:, None, :], cfg.lab_colors()[None, :, :])
    return dist.min(axis=1)[inverse.reshape(-1)].reshape(pixels.shape[:2])


def extract_mask(tile: RasterTile, cfg: FeatureClassConfig) -> FeatureMask:
    """Mark pixels whose colour lies within ``cfg.delta_threshold`` dE of the class colours."""
    if tile.channels != 3:
        raise RasterError(f"feature extraction needs an RGB tile, got {tile.channels} channels")
    return FeatureMask(color_distance_map(tile.pixels, cfg) <= cfg.delta_threshold, cfg.class_name)


def tile_entropy(tile: RasterTile) -> float:
    """Shannon entropy in bits of the 256-bin histogram of all samples, channels pooled."""
    counts = np.bincount(tile.pixels.reshape(-1), minlength=256)
    p = counts[counts > 0] / counts.sum()
    h = float(-(p * np.log2(p)).sum())
    return max(h, 0.0)


def filter_tiles(tiles, threshold: float):
    """Split ``tiles`` into (kept, dropped) by entropy >= threshold, preserving order."""
    if threshold < 0:
        raise ValueError("entropy threshold must be >= 0")
    kept, dropped = [], []
    for t in tiles:
        (kept if tile_entropy(t) >= threshold else dropped).append(t)
    return kept, dropped


def split_dataset(items, ratio_train: int = 4, ratio_test: int = 1, seed: int = 0):
    """Random train/test partition with sizes in the ratio ``ratio_train:ratio_test``."""
    items = list(items)
    if not items:
        raise ValueError("cannot split an empty dataset")
    if ratio_train <= 0 or ratio_test <= 0:
        raise ValueError("split ratios must be positive")
    n = len(items)
    n_test = int(round(n * ratio_test / (ratio_train + ratio_test)))
    n_test = min(max(n_test, 1 if n > 1 else 0), n)
    order = np.random.default_rng(seed).permutation(n)
    test_idx = set(order[:n_test].tolist())
    train = [x for i, x in enumerate(items) if i not in test_idx]
    test = [x for i, x in enumerate(items) if i in test_idx]
    return train, test
