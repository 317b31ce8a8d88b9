import hashlib
import json

import numpy as np
import pytest

from mapfeat.augment import house_density
from mapfeat.color import DEFAULT_PALETTE
from mapfeat.metrics import evaluate_corpus
from mapfeat.synth import (
    Feature,
    SceneError,
    SceneSpec,
    composite,
    footprint,
    load_corpus,
    make_corpus,
    make_scenes,
    random_scene,
    render_pair,
    render_truth_map,
    tile_key,
)
from mapfeat.tileio import Corpus

ROAD = DEFAULT_PALETTE["road"].canonical_color
HIGHWAY = DEFAULT_PALETTE["highway"].canonical_color


def test_highway_over_road():
    spec = SceneSpec(0, (40, 40), (
        Feature("road", "polyline", ((20, 0), (20, 39)), z_order=1, width=5),
        Feature("highway", "polyline", ((0, 20), (39, 20)), z_order=2, width=5),
    ))
    _, m, _ = render_pair(spec)
    assert tuple(m.pixels[20, 20]) == HIGHWAY
    assert tuple(m.pixels[20, 5]) == ROAD
    # order in the feature list does not matter, z does
    rev = SceneSpec(0, (40, 40), spec.features[::-1])
    assert render_pair(rev)[1] == m


def test_compositing_property(rng):
    feats = []
    for i in range(12):
        r0, c0 = (int(v) for v in rng.integers(0, 20, size=2))
        cls = ("house", "road", "main_road", "highway")[i % 4]
        feats.append(Feature(cls, "rect", (r0, c0, r0 + 8, c0 + 8), z_order=int(rng.integers(0, 5))))
    px = composite(feats, (30, 30), DEFAULT_PALETTE)
    for r in range(30):
        for c in range(30):
            covering = [(f.z_order, i, f) for i, f in enumerate(feats) if footprint(f, (30, 30))[r, c]]
            if covering:
                top = max(covering)[2]
                assert tuple(px[r, c]) == DEFAULT_PALETTE[top.class_name].canonical_color
            else:
                assert tuple(px[r, c]) == DEFAULT_PALETTE.background


def test_no_dropout_no_jitter_matches_truth():
    spec = random_scene(3, size=(128, 128), n_houses=20)
    _, m, truth = render_pair(spec)
    assert m == render_truth_map(spec)
    assert not any(t.dropped for t in truth)
    for t in truth:
        if t.feature.class_name == "house":
            assert np.all(m.pixels.reshape(-1, 3)[t.polygon.flat] == DEFAULT_PALETTE["house"].canonical_color)


def test_dropout_bookkeeping():
    spec = random_scene(11, n_houses=200, label_dropout=0.5)
    _, m, truth = render_pair(spec)
    houses = [t for t in truth if t.feature.class_name == "house"]
    assert len(houses) == 200
    # the seeded draw: replay the label stream by hand
    draws = np.random.default_rng([11, 1])
    expected = []
    for f in spec.features:
        u = draws.random()
        draws.integers(0, 1, size=2)
        if f.class_name == "house":
            expected.append(u < 0.5)
    assert [t.dropped for t in houses] == expected
    kept = sum(not t.dropped for t in houses)
    rep = evaluate_corpus(Corpus({"k": render_truth_map(spec)}), Corpus({"k": m}), DEFAULT_PALETTE)
    assert rep.precision == 1.0
    assert rep.recall == kept / 200


def test_jitter_bounded_and_in_tile():
    spec = random_scene(2, size=(96, 96), n_houses=10, jitter=20)
    _, m, truth = render_pair(spec)
    for t in truth:
        assert max(abs(v) for v in t.offset) <= 20


def test_deterministic():
    spec = random_scene(5, size=(64, 64), n_houses=5, label_dropout=0.3, jitter=2)
    a, b = render_pair(spec), render_pair(spec)
    assert a[0] == b[0] and a[1] == b[1]


def test_out_of_bounds_rejected():
    with pytest.raises(SceneError):
        SceneSpec(0, (10, 10), (Feature("house", "rect", (5, 5, 12, 8)),))
    with pytest.raises(SceneError):
        SceneSpec(0, (10, 10), (Feature("road", "polyline", ((0, 0), (10, 3))),))
    with pytest.raises(SceneError):
        SceneSpec(0, (10, 10), label_dropout=1.5)
    with pytest.raises(SceneError):
        random_scene(0, size=(32, 32), n_houses=50)


def test_make_corpus_single(tmp_path):
    make_corpus(1, tmp_path, seed=1, houses_per_tile=5, size=(64, 64))
    assert len(list((tmp_path / "images").glob("*.png"))) == 1
    assert len(list((tmp_path / "maps").glob("*.png"))) == 1
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    (entry,) = manifest["tiles"].values()
    assert entry["houses"] == 5
    assert all({"class", "coords", "z_order", "dropped"} <= f.keys() for f in entry["features"])


def test_corpus_round_trip_and_determinism(tmp_path):
    kw = dict(houses_per_tile=8, size=(96, 96), label_dropout=0.25)
    make_corpus(3, tmp_path / "a", seed=4, **kw)
    make_corpus(3, tmp_path / "b", seed=4, **kw)

    def digest(root):
        h = hashlib.sha256()
        for p in sorted(root.rglob("*")):
            if p.is_file():
                h.update(p.relative_to(root).as_posix().encode())
                h.update(p.read_bytes())
        return h.hexdigest()

    assert digest(tmp_path / "a") == digest(tmp_path / "b")
    images, maps, truth = load_corpus(tmp_path / "a")
    for idx, spec in enumerate(make_scenes(3, 4, 8, size=(96, 96), label_dropout=0.25)):
        img, m, _ = render_pair(spec, geo=tile_key(idx))
        assert images[str(tile_key(idx))] == img
        assert maps[str(tile_key(idx))] == m


def test_planted_density_exact(tmp_path):
    make_corpus(4, tmp_path, seed=2, houses_per_tile=[30, 31, 29, 40], size=(128, 128))
    _, maps, _ = load_corpus(tmp_path)
    rep = house_density(maps, DEFAULT_PALETTE)
    assert rep.house_count == 130
    assert rep.density_per_km2 == 130 / (4 * 128 * 128 / 1e6)


def test_end_to_end_perfect_labels(tmp_path):
    make_corpus(2, tmp_path, seed=0, houses_per_tile=25, size=(128, 128))
    _, maps, truth = load_corpus(tmp_path)
    rep = evaluate_corpus(truth, maps, DEFAULT_PALETTE)
    assert rep.precision == rep.recall == rep.f1 == 1.0
