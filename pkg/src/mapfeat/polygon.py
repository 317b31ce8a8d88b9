"""Connected-component polygons from feature masks, pixel IoU and GeoJSON export."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from shapely.geometry import box, mapping
from shapely.ops import unary_union

from .quadkey import QuadKey
from .raster import FeatureMask

_STRUCTURE = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


@dataclass(frozen=True, eq=False)
class FeaturePolygon:
    """A connected region of feature pixels inside a tile of ``tile_shape``.

    ``flat`` holds sorted row-major pixel indices; everything else derives from it.
    """

    id: int
    class_name: str
    flat: np.ndarray
    tile_shape: tuple[int, int]

    def __post_init__(self):
        flat = np.unique(np.asarray(self.flat, dtype=np.int64))
        if flat.size == 0:
            raise ValueError("polygon must cover at least one pixel")
        h, w = self.tile_shape
        if flat[0] < 0 or flat[-1] >= h * w:
            raise ValueError("polygon pixels fall outside the tile")
        flat.setflags(write=False)
        object.__setattr__(self, "flat", flat)
        object.__setattr__(self, "tile_shape", (int(h), int(w)))

    @classmethod
    def from_pixels(cls, id, class_name, pixels, tile_shape) -> "FeaturePolygon":
        rc = np.asarray(list(pixels), dtype=np.int64).reshape(-1, 2)
        return cls(id, class_name, rc[:, 0] * tile_shape[1] + rc[:, 1], tile_shape)

    @property
    def rows(self) -> np.ndarray:
        return self.flat // self.tile_shape[1]

    @property
    def cols(self) -> np.ndarray:
        return self.flat % self.tile_shape[1]

    @property
    def area_px(self) -> int:
        return int(self.flat.size)

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        r, c = self.rows, self.cols
        return int(r.min()), int(c.min()), int(r.max()), int(c.max())

    @property
    def pixel_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(zip(self.rows.tolist(), self.cols.tolist()))

    def to_mask(self) -> np.ndarray:
        m = np.zeros(self.tile_shape[0] * self.tile_shape[1], dtype=bool)
        m[self.flat] = True
        return m.reshape(self.tile_shape)

    def translated(self, drow: int, dcol: int, tile_shape=None) -> "FeaturePolygon":
        shape = tile_shape or self.tile_shape
        return FeaturePolygon(
            self.id, self.class_name, (self.rows + drow) * shape[1] + (self.cols + dcol), shape
        )

    def __repr__(self):
        return f"FeaturePolygon(id={self.id}, class={self.class_name!r}, area={self.area_px}, bbox={self.bbox})"


def polygonize(mask: FeatureMask, connectivity: int = 8, min_area_px: int = 4) -> list[FeaturePolygon]:
    """Connected components of the mask's ones, ordered by (min_row, min_col).

    Components smaller than ``min_area_px`` are discarded.
    """
    if connectivity not in _STRUCTURE:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    labels, n = ndimage.label(mask.bits, structure=_STRUCTURE[connectivity])
    if n == 0:
        return []
    flat_labels = labels.reshape(-1)
    order = np.argsort(flat_labels, kind="stable")
    sorted_labels = flat_labels[order]
    starts = np.searchsorted(sorted_labels, np.arange(1, n + 1))
    ends = np.searchsorted(sorted_labels, np.arange(1, n + 1), side="right")
    w = mask.width
    comps = []
    for s, e in zip(starts, ends):
        if e - s < min_area_px:
            continue
        flat = order[s:e]
        # first pixel in raster order breaks (min_row, min_col) ties
        comps.append(((int(flat[0] // w), int((flat % w).min()), int(flat[0])), flat))
    comps.sort(key=lambda c: c[0])
    return [FeaturePolygon(i, mask.class_name, flat, mask.bits.shape) for i, (_, flat) in enumerate(comps)]


def intersection_area(a: FeaturePolygon, b: FeaturePolygon) -> int:
    if a.tile_shape != b.tile_shape:
        raise ValueError(f"polygons come from different tile shapes {a.tile_shape} vs {b.tile_shape}")
    if a.flat[-1] < b.flat[0] or b.flat[-1] < a.flat[0]:
        return 0
    return int(np.intersect1d(a.flat, b.flat, assume_unique=True).size)


def iou(a: FeaturePolygon, b: FeaturePolygon) -> float:
    inter = intersection_area(a, b)
    return inter / (a.area_px + b.area_px - inter)


def iou_matrix(gt: list[FeaturePolygon], det: list[FeaturePolygon]) -> np.ndarray:
    """Pairwise IoU, rows = ``gt``, columns = ``det``."""
    out = np.zeros((len(gt), len(det)))
    if not gt or not det:
        return out
    shape = gt[0].tile_shape
    if any(p.tile_shape != shape for p in [*gt, *det]):
        raise ValueError("all polygons must share one tile shape")
    ga = np.array([p.area_px for p in gt])[:, None]
    da = np.array([p.area_px for p in det])[None, :]
    g_lab = _label_image(gt, shape)
    d_lab = _label_image(det, shape)
    if g_lab is None or d_lab is None:
        inter = np.array([[intersection_area(g, d) for d in det] for g in gt], dtype=np.int64)
    else:
        # label images turn all pairwise intersections into a single bincount
        both = (g_lab > 0) & (d_lab > 0)
        pairs = (g_lab[both] - 1) * len(det) + (d_lab[both] - 1)
        inter = np.bincount(pairs, minlength=len(gt) * len(det)).reshape(len(gt), len(det))
    return inter / (ga + da - inter)


def _label_image(polys, shape):
    """1-based label image, or None when the polygons overlap each other."""
    lab = np.zeros(shape[0] * shape[1], dtype=np.int64)
    for i, p in enumerate(polys, 1):
        if lab[p.flat].any():
            return None
        lab[p.flat] = i
    return lab


def polygon_geometry(p: FeaturePolygon):
    """Outline of the pixel set as a shapely geometry in (col, row) pixel space."""
    cells = []
    rows, cols = p.rows, p.cols
    for r in np.unique(rows):
        c = np.sort(cols[rows == r])
        breaks = np.flatnonzero(np.diff(c) != 1)
        for s, e in zip(np.r_[0, breaks + 1], np.r_[breaks, c.size - 1]):
            cells.append(box(c[s], r, c[e] + 1, r + 1))
    return unary_union(cells)


def to_geojson(polygons: list[FeaturePolygon], quadkey: QuadKey | None = None) -> dict:
    features = []
    for p in polygons:
        features.append(
            {
                "type": "Feature",
                "geometry": mapping(polygon_geometry(p)),
                "properties": {
                    "id": p.id,
                    "class": p.class_name,
                    "area_px": p.area_px,
                    "bbox": list(p.bbox),
                    "quadkey": str(quadkey) if quadkey is not None else None,
                },
            }
        )
    return {"type": "FeatureCollection", "features": features}
