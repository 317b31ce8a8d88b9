"""PNG tile I/O with JSON geo sidecars, and on-disk corpus layout.

A paired corpus lives under ``<root>/images/<key>.png`` and ``<root>/maps/<key>.png``;
each PNG has a ``<key>.json`` sidecar next to it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .quadkey import QuadKey
from .raster import RasterTile

IMAGES_DIR = "images"
MAPS_DIR = "maps"


class CorpusError(Exception):
    pass


def sidecar_path(png_path) -> Path:
    return Path(png_path).with_suffix(".json")


def write_tile(path, tile: RasterTile) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    px = tile.pixels
    mode = {1: "L", 3: "RGB", 4: "RGBA"}.get(tile.channels)
    if mode is None:
        raise CorpusError(f"cannot write {tile.channels}-channel tile as PNG")
    img = Image.fromarray(px[:, :, 0] if tile.channels == 1 else px, mode=mode)
    img.save(path, format="PNG")
    meta = {
        "quadkey": str(tile.geo),
        "level": tile.geo.level,
        "ground_resolution_m": tile.ground_resolution,
        "timestamp": tile.geo.timestamp,
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_tile(path) -> RasterTile:
    path = Path(path)
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB", "RGBA"):
            img = img.convert("RGB")
        px = np.array(img)
    geo, res = QuadKey(0), 1.0
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
        geo = QuadKey.from_string(meta.get("quadkey", ""), int(meta.get("timestamp", 0)))
        if "level" in meta and meta["level"] != geo.level:
            raise CorpusError(f"{side}: level {meta['level']} disagrees with quadkey {geo}")
        res = float(meta.get("ground_resolution_m", 1.0))
    return RasterTile(px, geo, res)


@dataclass
class Corpus:
    """Map (or image) tiles keyed by filename stem."""

    tiles: dict[str, RasterTile] = field(default_factory=dict)
    split: str = "train"
    name: str = ""

    def __len__(self) -> int:
        return len(self.tiles)

    def keys(self) -> list[str]:
        return sorted(self.tiles)

    def __getitem__(self, key: str) -> RasterTile:
        return self.tiles[key]


def read_tile_dir(directory, split: str = "train", name: str = "") -> Corpus:
    directory = Path(directory)
    if not directory.is_dir():
        raise CorpusError(f"not a directory: {directory}")
    marker = directory / "split.json"
    if marker.exists():
        split = json.loads(marker.read_text()).get("split", split)
    tiles = {p.stem: read_tile(p) for p in sorted(directory.glob("*.png"))}
    return Corpus(tiles, split, name or directory.name)


def write_tile_dir(directory, corpus: Corpus) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for key in corpus.keys():
        write_tile(directory / f"{key}.png", corpus.tiles[key])
    (directory / "split.json").write_text(json.dumps({"split": corpus.split}))


def resolve_map_dir(path) -> Path:
    """Accept either a map directory or a paired-corpus root containing ``maps/``."""
    path = Path(path)
    return path / MAPS_DIR if (path / MAPS_DIR).is_dir() else path


def pair_keys(a: Corpus, b: Corpus):
    """Return (shared keys, keys only in a, keys only in b), each sorted."""
    ka, kb = set(a.tiles), set(b.tiles)
    return sorted(ka & kb), sorted(ka - kb), sorted(kb - ka)
