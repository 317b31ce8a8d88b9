"""sRGB -> CIE L*a*b* conversion, CIE76 colour difference and feature palettes."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# sRGB primaries, D65 white, 2 degree observer
_RGB_TO_XYZ = np.array(
    [
        [0.412453, 0.357580, 0.180423],
        [0.212671, 0.715160, 0.072169],
        [0.019334, 0.119193, 0.950227],
    ]
)
D65_WHITE = np.array([0.95047, 1.0, 1.08883])

_EPS = (6.0 / 29.0) ** 3
_KAPPA = 1.0 / (3.0 * (6.0 / 29.0) ** 2)


def srgb_to_lab(rgb) -> np.ndarray:
    """Convert 8-bit sRGB samples (last axis = 3) to L*a*b* floats."""
    rgb = np.asarray(rgb, dtype=np.float64) / 255.0
    if rgb.shape[-1] != 3:
        raise ValueError(f"expected 3 channels on last axis, got shape {rgb.shape}")
    linear = np.where(rgb > 0.04045, ((rgb + 0.055) / 1.055) ** 2.4, rgb / 12.92)
    xyz = linear @ _RGB_TO_XYZ.T / D65_WHITE
    f = np.where(xyz > _EPS, np.cbrt(xyz), _KAPPA * xyz + 4.0 / 29.0)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def cie76_distance(a, b) -> np.ndarray | float:
    """Euclidean distance between L*a*b* colours (broadcasts over leading axes)."""
    d = np.linalg.norm(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64), axis=-1)
    return float(d) if d.ndim == 0 else d


@dataclass(frozen=True)
class FeatureClassConfig:
    """Colours that mark one feature class on a rasterized map.

    The first colour is canonical: it is what augmentation burns into labels.
    """

    class_name: str
    colors: tuple[tuple[int, int, int], ...]
    delta_threshold: float = 10.0

    def __post_init__(self):
        colors = tuple(tuple(int(v) for v in c) for c in self.colors)
        if not colors:
            raise ValueError(f"class {self.class_name!r} needs at least one colour")
        for c in colors:
            if len(c) != 3 or any(v < 0 or v > 255 for v in c):
                raise ValueError(f"invalid RGB colour {c} for class {self.class_name!r}")
        if not self.delta_threshold >= 0:
            raise ValueError("delta_threshold must be >= 0")
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "delta_threshold", float(self.delta_threshold))

    @property
    def canonical_color(self) -> tuple[int, int, int]:
        return self.colors[0]

    def lab_colors(self) -> np.ndarray:
        return srgb_to_lab(np.array(self.colors, dtype=np.uint8))


@dataclass(frozen=True)
class Palette:
    classes: tuple[FeatureClassConfig, ...]
    background: tuple[int, int, int] = (242, 239, 233)

    def __getitem__(self, name: str) -> FeatureClassConfig:
        for c in self.classes:
            if c.class_name == name:
                return c
        raise KeyError(f"class {name!r} not in palette (have {self.names})")

    def __contains__(self, name: str) -> bool:
        return any(c.class_name == name for c in self.classes)

    @property
    def names(self) -> list[str]:
        return [c.class_name for c in self.classes]

    def to_dict(self) -> dict:
        return {
            "background": list(self.background),
            "classes": [
                {"name": c.class_name, "colors": [list(x) for x in c.colors], "delta": c.delta_threshold}
                for c in self.classes
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Palette":
        try:
            classes = tuple(
                FeatureClassConfig(c["name"], tuple(tuple(x) for x in c["colors"]), c.get("delta", 10.0))
                for c in data["classes"]
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed palette: {exc}") from exc
        bg = tuple(data.get("background", (242, 239, 233)))
        return cls(classes, bg)

    @classmethod
    def load(cls, path) -> "Palette":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


# Approximates the classic OSM Mapnik style; override with a palette file.
# White roads sit ~6 dE from the sandy background, hence the tight road delta.
DEFAULT_PALETTE = Palette(
    classes=(
        FeatureClassConfig("house", ((188, 169, 169),), 10.0),
        FeatureClassConfig("road", ((255, 255, 255),), 3.0),
        FeatureClassConfig("main_road", ((252, 214, 164),), 10.0),
        FeatureClassConfig("highway", ((128, 155, 192),), 10.0),
    ),
    background=(242, 239, 233),
)
