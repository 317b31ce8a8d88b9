"""House density, completeness scores and false-positive label augmentation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .color import Palette
from .metrics import DEFAULT_IOU_THRESHOLD, Kind, match_tile, tile_polygons
from .raster import RasterTile
from .tileio import Corpus, pair_keys

REFERENCE_DENSITY = 3283.0  # SpaceNet Las Vegas houses per km2


class AugmentError(ValueError):
    pass


def completeness_pct(density: float, reference_density: float = REFERENCE_DENSITY) -> float:
    if reference_density <= 0:
        raise ValueError("reference density must be > 0")
    return density / reference_density * 100.0


@dataclass(frozen=True)
class DensityReport:
    city: str
    house_count: int
    area_km2: float
    density_per_km2: float
    completeness_pct: float
    reference_density: float = REFERENCE_DENSITY

    def to_dict(self) -> dict:
        return asdict(self)


def count_houses(tile: RasterTile, palette: Palette, class_name: str = "house",
                 connectivity: int = 8, min_area_px: int = 4) -> int:
    return len(tile_polygons(tile, palette, class_name, connectivity, min_area_px))


def house_density(
    maps: Corpus,
    palette: Palette,
    ground_resolution: float | None = None,
    reference_density: float = REFERENCE_DENSITY,
    class_name: str = "house",
    connectivity: int = 8,
    min_area_px: int = 4,
) -> DensityReport:
    """Houses per km2 over the whole corpus.

    ``ground_resolution`` (m/px) overrides each tile's own resolution when given.
    """
    if not len(maps):
        raise AugmentError("cannot compute density of an empty corpus")
    if ground_resolution is not None and ground_resolution <= 0:
        raise ValueError("ground resolution must be > 0")
    count = 0
    area = 0.0
    for key in maps.keys():
        t = maps[key]
        res = ground_resolution if ground_resolution is not None else t.ground_resolution
        area += t.width * res * t.height * res / 1e6
        count += count_houses(t, palette, class_name, connectivity, min_area_px)
    density = count / area
    return DensityReport(maps.name, count, area, density,
                         completeness_pct(density, reference_density), reference_density)


def false_positive_polygons(original: RasterTile, generated: RasterTile, palette: Palette,
                            threshold: float = DEFAULT_IOU_THRESHOLD, class_name: str = "house",
                            connectivity: int = 8, min_area_px: int = 4):
    gt = tile_polygons(original, palette, class_name, connectivity, min_area_px)
    det = tile_polygons(generated, palette, class_name, connectivity, min_area_px)
    fp_ids = {r.det_id for r in match_tile(gt, det, threshold) if r.kind is Kind.FP}
    return [p for p in det if p.id in fp_ids]


def augment_labels(
    original: RasterTile,
    generated: RasterTile,
    palette: Palette,
    threshold: float = DEFAULT_IOU_THRESHOLD,
    classes=("house",),
    connectivity: int = 8,
    min_area_px: int = 4,
) -> RasterTile:
    """Burn every false-positive polygon of ``generated`` into ``original``.

    FP pixels take the class's canonical colour; all other pixels are copied unchanged.
    """
    if original.pixels.shape != generated.pixels.shape:
        raise AugmentError(f"shape mismatch {original.pixels.shape} vs {generated.pixels.shape}")
    out = original.pixels.copy()
    flat = out.reshape(-1, out.shape[2])
    for name in classes:
        color = np.array(palette[name].canonical_color, dtype=np.uint8)
        for p in false_positive_polygons(original, generated, palette, threshold, name, connectivity, min_area_px):
            flat[p.flat] = color
    return original.with_pixels(out)


@dataclass
class AugmentResult:
    corpus: Corpus
    before: DensityReport
    after: DensityReport
    unpaired: list[str] = field(default_factory=list)

    @property
    def density_increase_pct(self) -> float:
        return (self.after.density_per_km2 / self.before.density_per_km2 - 1.0) * 100.0

    def to_dict(self) -> dict:
        return {
            "before": self.before.to_dict(),
            "after": self.after.to_dict(),
            "density_increase_pct": self.density_increase_pct if self.before.density_per_km2 else None,
            "unpaired": self.unpaired,
        }


def augment_corpus(
    train: Corpus,
    generated: Corpus,
    palette: Palette,
    threshold: float = DEFAULT_IOU_THRESHOLD,
    classes=("house",),
    ground_resolution: float | None = None,
    reference_density: float = REFERENCE_DENSITY,
    connectivity: int = 8,
    min_area_px: int = 4,
) -> AugmentResult:
    """Augment every paired training map; test-split corpora are refused."""
    if train.split == "test":
        raise AugmentError(f"refusing to augment test-split corpus {train.name!r}")
    shared, only_train, only_gen = pair_keys(train, generated)
    tiles = dict(train.tiles)
    for key in shared:
        tiles[key] = augment_labels(train[key], generated[key], palette, threshold, classes, connectivity, min_area_px)
    out = Corpus(tiles, train.split, train.name)
    kw = dict(ground_resolution=ground_resolution, reference_density=reference_density,
              connectivity=connectivity, min_area_px=min_area_px)
    before = house_density(train, palette, **kw)
    after = house_density(out, palette, **kw)
    return AugmentResult(out, before, after, only_train + only_gen)
