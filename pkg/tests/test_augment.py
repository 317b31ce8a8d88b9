import numpy as np
import pytest

from mapfeat.augment import (
    AugmentError,
    augment_corpus,
    augment_labels,
    completeness_pct,
    house_density,
)
from mapfeat.color import DEFAULT_PALETTE
from mapfeat.raster import RasterTile
from mapfeat.synth import planted_fp_corpora
from mapfeat.tileio import Corpus

HOUSE = DEFAULT_PALETTE["house"].canonical_color
BG = DEFAULT_PALETTE.background


def map_tile(rects, shape=(32, 32), color=HOUSE, res=1.0):
    px = np.empty(shape + (3,), dtype=np.uint8)
    px[:] = BG
    for r, c, h, w in rects:
        px[r:r + h, c:c + w] = color
    return RasterTile(px, ground_resolution=res)


@pytest.mark.parametrize("density,pct", [(1723, 52), (1285, 39), (95, 3), (141, 4), (3283, 100)])
def test_completeness_table(density, pct):
    assert completeness_pct(density, 3283) == pytest.approx(pct, abs=1.0)


def test_density_single_tile_arithmetic():
    rects = [(r * 50 + 5, c * 50 + 5, 6, 6) for r in range(2) for c in range(5)]
    corpus = Corpus({"k": map_tile(rects, (512, 512))}, name="x")
    rep = house_density(corpus, DEFAULT_PALETTE, ground_resolution=1.0)
    # 10 houses over 512 * 512 m^2 = 0.262144 km^2
    assert rep.house_count == 10
    assert rep.area_km2 == pytest.approx(0.262144)
    assert rep.density_per_km2 == pytest.approx(10 / 0.262144)
    assert rep.density_per_km2 == pytest.approx(38.1, abs=0.05)


def test_density_uses_tile_resolution_and_errors():
    corpus = Corpus({"k": map_tile([(2, 2, 4, 4)], (100, 100), res=10.0)})
    assert house_density(corpus, DEFAULT_PALETTE).area_km2 == pytest.approx(1.0)
    with pytest.raises(AugmentError):
        house_density(Corpus(), DEFAULT_PALETTE)
    with pytest.raises(ValueError):
        house_density(corpus, DEFAULT_PALETTE, ground_resolution=0)


def test_identical_maps_unchanged():
    t = map_tile([(2, 2, 4, 4), (10, 10, 5, 5)])
    assert augment_labels(t, t, DEFAULT_PALETTE) == t


def test_extra_house_is_burned_in():
    original = map_tile([(2, 2, 4, 4)])
    # off-palette but within delta of the house colour
    generated = map_tile([(2, 2, 4, 4)])
    gpx = generated.pixels.copy()
    gpx[20:25, 20:24] = (190, 168, 170)
    generated = generated.with_pixels(gpx)
    out = augment_labels(original, generated, DEFAULT_PALETTE)
    diff = np.any(out.pixels != original.pixels, axis=2)
    expected = np.zeros((32, 32), bool)
    expected[20:25, 20:24] = True
    np.testing.assert_array_equal(diff, expected)
    assert (out.pixels[20:25, 20:24] == HOUSE).all()


def test_tp_and_fn_untouched():
    original = map_tile([(2, 2, 4, 4), (20, 20, 5, 5)])
    generated = map_tile([(2, 2, 4, 4)])  # second house is a FN
    assert augment_labels(original, generated, DEFAULT_PALETTE) == original


def test_partial_overlap_fp_is_merged():
    original = map_tile([(2, 2, 4, 4)])
    generated = map_tile([(4, 4, 6, 6)])  # IoU 4/48 < 0.3 -> FP
    out = augment_labels(original, generated, DEFAULT_PALETTE)
    assert (out.pixels[4:10, 4:10] == HOUSE).all()
    assert (out.pixels[2:6, 2:6] == HOUSE).all()


def test_dimension_mismatch():
    with pytest.raises(AugmentError):
        augment_labels(map_tile([], (8, 8)), map_tile([], (9, 9)), DEFAULT_PALETTE)


def test_monotone_and_idempotent():
    train, gen = planted_fp_corpora(2, 40, 12, seed=4, size=(128, 128), cell=16)
    once = augment_corpus(train, gen, DEFAULT_PALETTE)
    twice = augment_corpus(once.corpus, gen, DEFAULT_PALETTE)
    assert once.after.house_count >= once.before.house_count
    assert all(twice.corpus[k] == once.corpus[k] for k in once.corpus.keys())
    assert twice.after.house_count == once.after.house_count


def test_planted_fp_density_delta():
    train, gen = planted_fp_corpora(3, 60, 15, seed=1, size=(128, 128), cell=16)
    res = augment_corpus(train, gen, DEFAULT_PALETTE)
    area = 3 * 128 * 128 / 1e6
    assert res.before.house_count == 60
    assert res.after.density_per_km2 == pytest.approx(res.before.density_per_km2 + 15 / area)


def test_no_fp_corpus_unchanged():
    train, _ = planted_fp_corpora(2, 30, 0, seed=2, size=(96, 96), cell=16)
    res = augment_corpus(train, train, DEFAULT_PALETTE)
    assert res.after == res.before
    assert res.density_increase_pct == 0.0


def test_pixel_conservation_outside_fp():
    train, gen = planted_fp_corpora(1, 20, 5, seed=8, size=(128, 128), cell=16)
    res = augment_corpus(train, gen, DEFAULT_PALETTE)
    (key,) = train.keys()
    before, after = train[key].pixels, res.corpus[key].pixels
    changed = np.any(before != after, axis=2)
    gen_house = np.all(gen[key].pixels == HOUSE, axis=2)
    train_house = np.all(before == HOUSE, axis=2)
    assert not (changed & ~(gen_house & ~train_house)).any()


def test_test_split_refused():
    train, gen = planted_fp_corpora(1, 5, 1, seed=0, size=(64, 64), cell=16)
    train.split = "test"
    with pytest.raises(AugmentError):
        augment_corpus(train, gen, DEFAULT_PALETTE)


def test_unpaired_reported():
    train, gen = planted_fp_corpora(2, 10, 2, seed=0, size=(64, 64), cell=16)
    del gen.tiles[gen.keys()[0]]
    res = augment_corpus(train, gen, DEFAULT_PALETTE)
    assert res.unpaired == [train.keys()[0]]


def test_road_augmentation_is_opt_in():
    road = DEFAULT_PALETTE["road"].canonical_color
    original = map_tile([])
    generated = map_tile([(10, 0, 3, 32)], color=road)
    assert augment_labels(original, generated, DEFAULT_PALETTE) == original
    out = augment_labels(original, generated, DEFAULT_PALETTE, classes=("house", "road"))
    assert (out.pixels[10:13] == road).all()
