"""Feature-mask extraction, feature-level evaluation, label augmentation,
feature-weighted cycle loss and a decentralized SGD simulator for rasterized maps."""

from .augment import DensityReport, augment_corpus, augment_labels, completeness_pct, house_density
from .color import DEFAULT_PALETTE, FeatureClassConfig, Palette, cie76_distance, srgb_to_lab
from .metrics import MatchRecord, MatchReport, aggregate, evaluate_corpus, match_tile, scores_from_counts
from .polygon import FeaturePolygon, iou, polygonize, to_geojson
from .quadkey import QuadKey, quadkey_decode, quadkey_encode
from .raster import FeatureMask, RasterTile, extract_mask, filter_tiles, split_dataset, tile_entropy

__version__ = "0.1.0"
