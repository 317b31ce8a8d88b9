"""Synthetic paired corpora: textured image tiles, rasterized map tiles and truth.

Maps are composited top-down: where features overlap, the one with the highest
z-order paints the pixel (later features win ties). Houses can be dropped from
the map or shifted by a few pixels to mimic incomplete, inaccurate labels; the
image tile always shows every feature where it really is.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .color import DEFAULT_PALETTE, Palette
from .polygon import FeaturePolygon
from .quadkey import QuadKey
from .raster import RasterTile
from .tileio import IMAGES_DIR, MAPS_DIR, Corpus, read_tile_dir, write_tile

TRUTH_DIR = "truth"
MANIFEST = "manifest.json"

_IMAGE_COLORS = {
    "house": (160, 150, 155),
    "road": (95, 95, 95),
    "main_road": (110, 105, 95),
    "highway": (80, 80, 85),
}


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Feature:
    """A rectangle ``(r0, c0, r1, c1)`` (half-open) or a polyline of ``(row, col)`` points."""

    class_name: str
    kind: str
    coords: tuple
    z_order: int = 0
    width: float = 1.0

    def to_dict(self) -> dict:
        return {"class": self.class_name, "kind": self.kind, "coords": [list(c) if isinstance(c, tuple) else c for c in self.coords],
                "z_order": self.z_order, "width": self.width}


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    size: tuple[int, int] = (512, 512)
    features: tuple[Feature, ...] = ()
    label_dropout: float = 0.0
    jitter: int = 0
    dropout_classes: tuple[str, ...] = ("house",)

    def __post_init__(self):
        if not 0.0 <= self.label_dropout <= 1.0:
            raise SceneError("label_dropout must be a probability")
        if self.jitter < 0:
            raise SceneError("jitter must be >= 0")
        h, w = self.size
        for f in self.features:
            if f.kind == "rect":
                r0, c0, r1, c1 = f.coords
                if not (0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w):
                    raise SceneError(f"rect {f.coords} outside {h}x{w} tile")
            elif f.kind == "polyline":
                if len(f.coords) < 2:
                    raise SceneError("polyline needs at least two points")
                for r, c in f.coords:
                    if not (0 <= r <= h - 1 and 0 <= c <= w - 1):
                        raise SceneError(f"polyline point {(r, c)} outside {h}x{w} tile")
            else:
                raise SceneError(f"unknown feature kind {f.kind!r}")


def footprint(f: Feature, size) -> np.ndarray:
    h, w = size
    m = np.zeros((h, w), dtype=bool)
    if f.kind == "rect":
        r0, c0, r1, c1 = f.coords
        m[r0:r1, c0:c1] = True
        return m
    half = f.width / 2.0
    rr, cc = np.mgrid[0:h, 0:w]
    pts = np.asarray(f.coords, dtype=np.float64)
    for (r0, c0), (r1, c1) in zip(pts[:-1], pts[1:]):
        dr, dc = r1 - r0, c1 - c0
        seg2 = dr * dr + dc * dc
        t = np.zeros_like(rr, dtype=np.float64) if seg2 == 0 else np.clip(((rr - r0) * dr + (cc - c0) * dc) / seg2, 0, 1)
        d2 = (rr - (r0 + t * dr)) ** 2 + (cc - (c0 + t * dc)) ** 2
        m |= d2 <= half * half
    return m


def composite(features, size, palette: Palette, colors=None) -> np.ndarray:
    """Paint features in ascending z-order over the palette background."""
    h, w = size
    out = np.empty((h, w, 3), dtype=np.uint8)
    out[:] = palette.background
    for _, _, f in sorted((f.z_order, i, f) for i, f in enumerate(features)):
        color = colors[f.class_name] if colors else palette[f.class_name].canonical_color
        out[footprint(f, size)] = color
    return out


@dataclass(frozen=True)
class TruthFeature:
    feature: Feature
    polygon: FeaturePolygon
    dropped: bool
    offset: tuple[int, int] = (0, 0)

    def to_dict(self) -> dict:
        d = self.feature.to_dict()
        d.update(id=self.polygon.id, dropped=self.dropped, offset=list(self.offset), area_px=self.polygon.area_px)
        return d


def _shift(f: Feature, dr: int, dc: int) -> Feature:
    if f.kind == "rect":
        r0, c0, r1, c1 = f.coords
        return replace(f, coords=(r0 + dr, c0 + dc, r1 + dr, c1 + dc))
    return replace(f, coords=tuple((r + dr, c + dc) for r, c in f.coords))


def _label_draws(spec: SceneSpec):
    """Per-feature (dropped, offset), drawn in feature order from the label stream."""
    rng = np.random.default_rng([spec.seed, 1])
    h, w = spec.size
    out = []
    for f in spec.features:
        u = rng.random()
        dr, dc = (int(v) for v in rng.integers(-spec.jitter, spec.jitter + 1, size=2))
        if f.class_name not in spec.dropout_classes:
            out.append((False, (0, 0)))
            continue
        if f.kind == "rect":
            r0, c0, r1, c1 = f.coords
            dr = int(np.clip(dr, -r0, h - r1))
            dc = int(np.clip(dc, -c0, w - c1))
        else:
            rows = [p[0] for p in f.coords]
            cols = [p[1] for p in f.coords]
            dr = int(np.clip(dr, -min(rows), h - 1 - max(rows)))
            dc = int(np.clip(dc, -min(cols), w - 1 - max(cols)))
        out.append((bool(u < spec.label_dropout), (dr, dc)))
    return out


def render_image(spec: SceneSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 2])
    h, w = spec.size
    base = np.array([105.0, 120.0, 85.0])
    img = base + rng.normal(0.0, 12.0, size=(h, w, 1)) + rng.normal(0.0, 4.0, size=(h, w, 3))
    for _, _, f in sorted((f.z_order, i, f) for i, f in enumerate(spec.features)):
        m = footprint(f, spec.size)
        shade = rng.uniform(-15, 15)
        color = np.array(_IMAGE_COLORS.get(f.class_name, (128, 128, 128)), dtype=np.float64) + shade
        img[m] = color + rng.normal(0.0, 3.0, size=(int(m.sum()), 3))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def render_pair(spec: SceneSpec, palette: Palette = DEFAULT_PALETTE, geo: QuadKey | None = None,
                ground_resolution: float = 1.0):
    """Return (image tile, map tile, truth) for one scene.

    ``truth`` lists every feature with its true footprint, including those
    dropped from the map (flagged).
    """
    geo = geo or QuadKey(0)
    draws = _label_draws(spec)
    labeled = [_shift(f, *off) for f, (dropped, off) in zip(spec.features, draws) if not dropped]
    map_px = composite(labeled, spec.size, palette)
    truth = []
    for i, (f, (dropped, off)) in enumerate(zip(spec.features, draws)):
        poly = FeaturePolygon(i, f.class_name, np.flatnonzero(footprint(f, spec.size)), spec.size)
        truth.append(TruthFeature(f, poly, dropped, off))
    image = RasterTile(render_image(spec), geo, ground_resolution)
    return image, RasterTile(map_px, geo, ground_resolution), truth


def render_truth_map(spec: SceneSpec, palette: Palette = DEFAULT_PALETTE, geo: QuadKey | None = None,
                     ground_resolution: float = 1.0) -> RasterTile:
    """The map with every feature present and in place."""
    return RasterTile(composite(spec.features, spec.size, palette), geo or QuadKey(0), ground_resolution)


def random_scene(
    seed: int,
    size=(512, 512),
    n_houses: int = 100,
    cell: int = 16,
    house_size=(4, 9),
    road_rows: int = 2,
    road_cols: int = 1,
    label_dropout: float = 0.0,
    jitter: int = 0,
) -> SceneSpec:
    """Houses on a jittered grid, horizontal roads (z=1) crossed by vertical highways (z=2).

    Houses occupy distinct grid cells away from roads and never touch each other
    when ``house_size[1] < cell``.
    """
    rng = np.random.default_rng([seed, 0])
    h, w = size
    nr, nc = h // cell, w // cell
    rr = sorted(rng.choice(nr, size=min(road_rows, nr), replace=False).tolist()) if road_rows else []
    rc = sorted(rng.choice(nc, size=min(road_cols, nc), replace=False).tolist()) if road_cols else []
    features = []
    for r in rr:
        y = r * cell + cell // 2
        features.append(Feature("road", "polyline", ((y, 0), (y, w - 1)), z_order=1, width=cell / 3))
    for c in rc:
        x = c * cell + cell // 2
        features.append(Feature("highway", "polyline", ((0, x), (h - 1, x)), z_order=2, width=cell / 3))
    free = [(i, j) for i in range(nr) for j in range(nc) if i not in rr and j not in rc]
    if n_houses > len(free):
        raise SceneError(f"{n_houses} houses do not fit in {len(free)} free cells")
    lo, hi = house_size
    if hi >= cell:
        raise SceneError("house size must be smaller than the grid cell")
    for k in sorted(rng.choice(len(free), size=n_houses, replace=False).tolist()):
        i, j = free[k]
        hh, ww = (int(v) for v in rng.integers(lo, hi + 1, size=2))
        r0 = i * cell + int(rng.integers(0, cell - hh))
        c0 = j * cell + int(rng.integers(0, cell - ww))
        features.append(Feature("house", "rect", (r0, c0, r0 + hh, c0 + ww), z_order=3))
    return SceneSpec(seed, tuple(size), tuple(features), label_dropout, jitter)


def tile_key(index: int, level: int = 16) -> QuadKey:
    path = []
    for _ in range(level):
        path.append(index & 3)
        index >>= 2
    return QuadKey(level, tuple(reversed(path)))


def split_counts(total: int, parts: int) -> list[int]:
    q, r = divmod(total, parts)
    return [q + (i < r) for i in range(parts)]


@dataclass
class CorpusManifest:
    tiles: dict[str, dict] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"tiles": self.tiles}, indent=2, sort_keys=True)


def tile_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def make_scenes(n_tiles: int, seed: int = 0, houses_per_tile=100, **scene_kw) -> list[SceneSpec]:
    if n_tiles <= 0:
        raise SceneError("n_tiles must be positive")
    counts = houses_per_tile if isinstance(houses_per_tile, (list, tuple)) else [houses_per_tile] * n_tiles
    return [random_scene(s, n_houses=c, **scene_kw) for s, c in zip(tile_seeds(seed, n_tiles), counts)]


def make_corpus(n_tiles: int, out_dir, seed: int = 0, palette: Palette = DEFAULT_PALETTE,
                ground_resolution: float = 1.0, houses_per_tile=100, **scene_kw) -> CorpusManifest:
    """Write ``images/``, ``maps/``, ``truth/`` (full-label maps) and ``manifest.json``.

    Returns the manifest; per-tile I/O failures are collected under ``errors``.
    """
    out = Path(out_dir)
    manifest = CorpusManifest()
    errors = {}
    for idx, spec in enumerate(make_scenes(n_tiles, seed, houses_per_tile, **scene_kw)):
        geo = tile_key(idx)
        key = str(geo)
        image, map_tile, truth = render_pair(spec, palette, geo, ground_resolution)
        try:
            write_tile(out / IMAGES_DIR / f"{key}.png", image)
            write_tile(out / MAPS_DIR / f"{key}.png", map_tile)
            write_tile(out / TRUTH_DIR / f"{key}.png", render_truth_map(spec, palette, geo, ground_resolution))
        except OSError as exc:
            errors[key] = str(exc)
            continue
        manifest.tiles[key] = {
            "seed": spec.seed,
            "size": list(spec.size),
            "label_dropout": spec.label_dropout,
            "jitter": spec.jitter,
            "houses": sum(t.feature.class_name == "house" for t in truth),
            "houses_dropped": sum(t.dropped for t in truth),
            "features": [t.to_dict() for t in truth],
        }
    payload = json.loads(manifest.to_json())
    payload["errors"] = errors
    out.mkdir(parents=True, exist_ok=True)
    (out / MANIFEST).write_text(json.dumps(payload, indent=2, sort_keys=True))
    if errors:
        raise OSError(f"failed to write {len(errors)} tile(s): {errors}")
    return manifest


def load_corpus(root):
    """Read a corpus written by :func:`make_corpus` as (images, maps, truth maps)."""
    root = Path(root)
    return tuple(read_tile_dir(root / d, name=root.name) for d in (IMAGES_DIR, MAPS_DIR, TRUTH_DIR))


def planted_fp_corpora(n_tiles: int, base_houses: int, planted: int, seed: int = 0,
                       palette: Palette = DEFAULT_PALETTE, ground_resolution: float = 1.0, **scene_kw):
    """Training maps with ``base_houses`` and generated maps that add ``planted`` extra houses.

    Every label house is reproduced exactly in the generated maps, so each extra
    house is a false positive and nothing else is.
    """
    totals = split_counts(base_houses + planted, n_tiles)
    extras = split_counts(planted, n_tiles)
    train, generated = {}, {}
    for idx, spec in enumerate(make_scenes(n_tiles, seed, totals, **scene_kw)):
        geo = tile_key(idx)
        rng = np.random.default_rng([spec.seed, 3])
        houses = [i for i, f in enumerate(spec.features) if f.class_name == "house"]
        extra = set(rng.choice(houses, size=extras[idx], replace=False).tolist())
        kept = tuple(f for i, f in enumerate(spec.features) if i not in extra)
        train[str(geo)] = render_truth_map(replace(spec, features=kept), palette, geo, ground_resolution)
        generated[str(geo)] = render_truth_map(spec, palette, geo, ground_resolution)
    return Corpus(train, "train", "planted"), Corpus(generated, "train", "planted-generated")
