import numpy as np
import pytest

from mapfeat.color import DEFAULT_PALETTE
from mapfeat.fwloss import (
    AffinePixel,
    Conv3x3,
    Identity,
    ShapeError,
    cycle_fw_loss,
    fw_loss,
    fw_loss_grad,
    mask_union,
    to_tile,
)
from mapfeat.raster import FeatureMask, RasterTile

HOUSE = DEFAULT_PALETTE["house"].canonical_color


def brute_l1(x, x_hat, mask):
    total = 0.0
    h, w, c = x.shape
    for i in range(h):
        for j in range(w):
            for k in range(c):
                total += abs(x_hat[i, j, k] - x[i, j, k]) * mask[i, j]
    return total


def away_from_zero(rng, shape, gap=1e-3):
    """Random (x, x_hat) with every residual at least ``gap`` in magnitude."""
    x = rng.random(shape)
    r = rng.uniform(gap, 0.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return x, x + r


def test_mask_union_identities(rng):
    m = FeatureMask(rng.random((6, 6)) < 0.5, "house")
    zeros = FeatureMask(np.zeros((6, 6), bool), "house")
    assert mask_union(m, zeros) == m
    assert mask_union(m, m) == m
    checker = (np.indices((6, 6)).sum(0) % 2).astype(bool)
    assert mask_union(FeatureMask(checker), FeatureMask(~checker)).bits.all()
    with pytest.raises(ShapeError):
        mask_union(m, FeatureMask(np.zeros((5, 6), bool)))


def test_zero_mask_zero_loss(rng):
    x, xh = rng.random((8, 8, 3)), rng.random((8, 8, 3))
    z = np.zeros((8, 8), bool)
    assert fw_loss(x, xh, z) == 0.0
    assert not fw_loss_grad(x, xh, z).any()


def test_single_pixel():
    assert fw_loss(np.full((1, 1, 1), 0.2), np.full((1, 1, 1), 0.5), np.ones((1, 1))) == pytest.approx(0.3)


def test_all_ones_equals_plain_l1(rng):
    x, xh = rng.random((8, 8, 3)), rng.random((8, 8, 3))
    ones = np.ones((8, 8))
    assert fw_loss(x, xh, ones) == pytest.approx(brute_l1(x, xh, ones), abs=1e-12)
    assert fw_loss(x, xh, ones) == pytest.approx(np.abs(xh - x).sum(), abs=1e-12)


def test_masked_matches_brute_force(rng):
    x, xh = rng.random((7, 5, 3)), rng.random((7, 5, 3))
    m = rng.random((7, 5)) < 0.4
    assert fw_loss(x, xh, m) == pytest.approx(brute_l1(x, xh, m), abs=1e-12)


def test_batch_mean(rng):
    x, xh = rng.random((4, 6, 6, 3)), rng.random((4, 6, 6, 3))
    m = rng.random((4, 6, 6)) < 0.5
    per = [fw_loss(x[b], xh[b], m[b]) for b in range(4)]
    assert fw_loss(x, xh, m) == pytest.approx(np.mean(per))
    g = fw_loss_grad(x, xh, m)
    np.testing.assert_allclose(g[1], fw_loss_grad(x[1], xh[1], m[1]) / 4)
    # a single (H, W) mask broadcasts over the batch
    assert fw_loss(x, xh, m[0]) == pytest.approx(np.mean([fw_loss(x[b], xh[b], m[0]) for b in range(4)]))


def test_zero_iff_equal_on_mask(rng):
    x = rng.random((5, 5, 3))
    m = rng.random((5, 5)) < 0.5
    xh = x.copy()
    xh[~m] += 0.3
    assert fw_loss(x, xh, m) == 0.0
    xh[m.nonzero()[0][0], m.nonzero()[1][0], 0] += 1e-3
    assert fw_loss(x, xh, m) > 0


def test_mask_monotone(rng):
    x, xh = rng.random((6, 6, 3)), rng.random((6, 6, 3))
    small = rng.random((6, 6)) < 0.3
    big = small | (rng.random((6, 6)) < 0.3)
    assert fw_loss(x, xh, big) >= fw_loss(x, xh, small)


def test_grad_sign():
    x = np.zeros((2, 2, 1))
    xh = np.array([[[0.5], [-0.5]], [[0.0], [0.2]]])
    g = fw_loss_grad(x, xh, np.array([[1, 1], [1, 0]]))
    assert g[0, 0, 0] == 1.0 and g[0, 1, 0] == -1.0
    assert g[1, 0, 0] == 0.0  # zero residual subgradient
    assert g[1, 1, 0] == 0.0  # unmasked


def central_fd(f, z, h=1e-6):
    g = np.zeros_like(z)
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += h
        zm[idx] -= h
        g[idx] = (f(zp) - f(zm)) / (2 * h)
    return g


def test_grad_vs_finite_differences(rng):
    for _ in range(10):
        x, xh = away_from_zero(rng, (4, 4, 3))
        m = rng.random((4, 4)) < 0.6
        fd = central_fd(lambda z: fw_loss(x, z, m), xh)
        an = fw_loss_grad(x, xh, m)
        nz = an != 0
        assert np.abs(fd[~nz]).max(initial=0) < 1e-6
        assert (np.abs(fd[nz] - an[nz]) / np.abs(an[nz])).max() < 1e-4


def test_shape_and_finite_errors(rng):
    with pytest.raises(ShapeError):
        fw_loss(rng.random((4, 4, 3)), rng.random((4, 4, 2)), np.ones((4, 4)))
    with pytest.raises(ShapeError):
        fw_loss(rng.random((4, 4, 3)), rng.random((4, 4, 3)), np.ones((3, 4)))
    bad = rng.random((4, 4, 3))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        fw_loss(bad, rng.random((4, 4, 3)), np.ones((4, 4)))


@pytest.mark.parametrize("gen", [Identity(), AffinePixel(np.array([0.9, 1.1, 1.3]), 0.05),
                                 Conv3x3(np.arange(9.0).reshape(3, 3) / 10)])
def test_generator_vjp_vs_fd(gen, rng):
    x = rng.random((5, 4, 3))
    v = rng.standard_normal((5, 4, 3))
    fd = central_fd(lambda z: float((gen(z) * v).sum()), x)
    np.testing.assert_allclose(gen.vjp(x, v), fd, rtol=1e-6, atol=1e-6)


def feature_map(shape, stencil=None):
    px = np.empty(shape + (3,), dtype=np.uint8)
    px[:] = DEFAULT_PALETTE.background
    if stencil is None:
        px[:] = HOUSE
    else:
        px[stencil] = HOUSE
    return RasterTile(px)


def test_cycle_identity_zero_loss(rng):
    x = rng.random((6, 6, 3))
    res = cycle_fw_loss(x, feature_map((6, 6)), Identity(), Identity(), DEFAULT_PALETTE)
    assert res.loss == 0.0
    assert res.mask.bits.all()


def test_cycle_shift_closed_form(rng):
    x = rng.random((6, 6, 3)) * 0.5
    res = cycle_fw_loss(x, feature_map((6, 6)), Identity(), AffinePixel(1.0, 0.1), DEFAULT_PALETTE)
    assert res.loss == pytest.approx(0.1 * 36 * 3)


def test_cycle_mask_is_union_of_real_and_generated(rng):
    stencil = np.zeros((8, 8), bool)
    stencil[1:3, 1:3] = True
    x = np.full((8, 8, 3), 0.2)
    x[5:7, 5:7] = np.array(HOUSE) / 255.0  # translated "image" shows a house elsewhere
    res = cycle_fw_loss(x, feature_map((8, 8), stencil), Identity(), AffinePixel(1.0, 0.01), DEFAULT_PALETTE)
    expected = stencil.copy()
    expected[5:7, 5:7] = True
    np.testing.assert_array_equal(res.mask.bits, expected)
    assert res.loss == pytest.approx(0.01 * 8 * 3)


def test_cycle_gradient_through_gx(rng):
    stencil = rng.random((5, 5)) < 0.5
    y = feature_map((5, 5), stencil)
    g_y = AffinePixel(np.array([0.8, 1.0, 1.2]), np.array([0.02, -0.01, 0.03]))
    g_x = AffinePixel(np.array([1.1, 0.9, 1.05]), np.array([0.07, -0.06, 0.08]))
    x = rng.random((5, 5, 3))
    res = cycle_fw_loss(x, y, g_y, g_x, DEFAULT_PALETTE)
    assert np.abs(res.x_hat - x).min() > 1e-4
    fd = central_fd(lambda z: fw_loss(x, g_x(z), res.mask), res.y_hat)
    nz = res.grad_y_hat != 0
    assert (np.abs(fd[nz] - res.grad_y_hat[nz]) / np.abs(res.grad_y_hat[nz])).max() < 1e-4
    assert np.abs(fd[~nz]).max(initial=0) < 1e-6


def test_cycle_weight_and_errors(rng):
    x = rng.random((4, 4, 3))
    y = feature_map((4, 4))
    a = cycle_fw_loss(x, y, Identity(), AffinePixel(1.0, 0.1), DEFAULT_PALETTE)
    b = cycle_fw_loss(x, y, Identity(), AffinePixel(1.0, 0.1), DEFAULT_PALETTE, weight=2.5)
    assert b.loss == pytest.approx(2.5 * a.loss)
    with pytest.raises(ShapeError):
        cycle_fw_loss(x, feature_map((5, 4)), Identity(), Identity(), DEFAULT_PALETTE)

    class Crop(Identity):
        def forward(self, z):
            return z[:-1]

    with pytest.raises(ShapeError):
        cycle_fw_loss(x, y, Crop(), Identity(), DEFAULT_PALETTE)


def test_to_tile_quantizes():
    t = to_tile(np.array([[[0.0, 0.5, 1.2]]]))
    assert t.pixels.tolist() == [[[0, 128, 255]]]
