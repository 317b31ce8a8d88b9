"""Feature-weighted cycle-consistency loss with analytic gradients.

Tensors are float64 arrays shaped (H, W, C) or batched (B, H, W, C) with values
nominally in [0, 1]. Masks are (H, W) or (B, H, W) and broadcast over channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .color import Palette
from .raster import FeatureMask, RasterTile, extract_mask


class ShapeError(ValueError):
    pass


def mask_union(m1: FeatureMask, m2: FeatureMask) -> FeatureMask:
    if m1.bits.shape != m2.bits.shape:
        raise ShapeError(f"mask shapes differ: {m1.bits.shape} vs {m2.bits.shape}")
    name = m1.class_name if m1.class_name == m2.class_name else f"{m1.class_name}|{m2.class_name}"
    return FeatureMask(m1.bits | m2.bits, name)


def _mask_array(mask) -> np.ndarray:
    return np.asarray(mask.bits if isinstance(mask, FeatureMask) else mask, dtype=np.float64)


def _check(x, x_hat, mask):
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    m = _mask_array(mask)
    if x.shape != x_hat.shape:
        raise ShapeError(f"x {x.shape} and x_hat {x_hat.shape} differ")
    if x.ndim not in (3, 4):
        raise ShapeError(f"expected (H,W,C) or (B,H,W,C), got {x.shape}")
    if m.shape != x.shape[:-1] and not (x.ndim == 4 and m.shape == x.shape[1:3]):
        raise ShapeError(f"mask {m.shape} does not match spatial dims of {x.shape}")
    if not (np.isfinite(x).all() and np.isfinite(x_hat).all()):
        raise ValueError("non-finite values in loss inputs")
    batch = x.shape[0] if x.ndim == 4 else 1
    return x, x_hat, m[..., None], batch


def fw_loss(x, x_hat, mask) -> float:
    """Masked L1 between ``x_hat`` and ``x``, averaged over the batch axis if present."""
    x, x_hat, m, batch = _check(x, x_hat, mask)
    return float(np.sum(np.abs(x_hat - x) * m) / batch)


def fw_loss_grad(x, x_hat, mask) -> np.ndarray:
    """d fw_loss / d x_hat; the subgradient at zero residual is 0."""
    x, x_hat, m, batch = _check(x, x_hat, mask)
    return np.sign(x_hat - x) * m / batch


class Generator:
    """Shape-preserving differentiable map with a vector-Jacobian product."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vjp(self, x: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Return J(x)^T g for the Jacobian of ``forward`` at ``x``."""
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(np.asarray(x, dtype=np.float64))


class Identity(Generator):
    def forward(self, x):
        return x.copy()

    def vjp(self, x, g):
        return np.asarray(g, dtype=np.float64).copy()


@dataclass
class AffinePixel(Generator):
    """Per-channel ``scale * x + shift``."""

    scale: np.ndarray | float = 1.0
    shift: np.ndarray | float = 0.0

    def forward(self, x):
        return x * self.scale + self.shift

    def vjp(self, x, g):
        return g * self.scale


@dataclass
class Conv3x3(Generator):
    """Depthwise 3x3 correlation with zero padding; ``kernel`` is (3, 3, C) or (3, 3)."""

    kernel: np.ndarray

    def _k(self, channels):
        k = np.asarray(self.kernel, dtype=np.float64)
        return np.broadcast_to(k[..., None] if k.ndim == 2 else k, (3, 3, channels))

    def forward(self, x):
        k = self._k(x.shape[-1])
        pad = [(0, 0)] * (x.ndim - 3) + [(1, 1), (1, 1), (0, 0)]
        xp = np.pad(x, pad)
        h, w = x.shape[-3], x.shape[-2]
        out = np.zeros_like(x)
        for di in range(3):
            for dj in range(3):
                out += k[di, dj] * xp[..., di:di + h, dj:dj + w, :]
        return out

    def vjp(self, x, g):
        k = self._k(x.shape[-1])
        pad = [(0, 0)] * (x.ndim - 3) + [(1, 1), (1, 1), (0, 0)]
        gp = np.pad(np.asarray(g, dtype=np.float64), pad)
        h, w = x.shape[-3], x.shape[-2]
        out = np.zeros_like(x)
        for di in range(3):
            for dj in range(3):
                out += k[2 - di, 2 - dj] * gp[..., di:di + h, dj:dj + w, :]
        return out


def to_tile(t: np.ndarray) -> RasterTile:
    """Quantize a [0, 1] float image to an 8-bit tile."""
    return RasterTile(np.clip(np.rint(np.asarray(t) * 255.0), 0, 255).astype(np.uint8))


@dataclass
class CycleLoss:
    loss: float
    grad_x_hat: np.ndarray  # dL/d gX(y_hat)
    grad_y_hat: np.ndarray  # dL/d y_hat, chained through gX
    mask: FeatureMask
    y_hat: np.ndarray
    x_hat: np.ndarray


def cycle_fw_loss(
    x: np.ndarray,
    y: RasterTile,
    g_y: Generator,
    g_x: Generator,
    palette: Palette,
    class_name: str = "house",
    weight: float = 1.0,
) -> CycleLoss:
    """Feature-weighted cycle loss for one (image, map) pair.

    The mask is the union of features extracted from the real map ``y`` and from
    the quantized translation ``g_y(x)``; it is held constant when differentiating.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"cycle loss takes a single (H,W,C) image, got {x.shape}")
    y_hat = g_y(x)
    if y_hat.shape != x.shape:
        raise ShapeError(f"g_y changed shape {x.shape} -> {y_hat.shape}")
    x_hat = g_x(y_hat)
    if x_hat.shape != x.shape:
        raise ShapeError(f"g_x changed shape {y_hat.shape} -> {x_hat.shape}")
    if y.pixels.shape[:2] != x.shape[:2]:
        raise ShapeError(f"map {y.pixels.shape} does not match image {x.shape}")
    cfg = palette[class_name]
    mask = mask_union(extract_mask(y, cfg), extract_mask(to_tile(y_hat), cfg))
    loss = weight * fw_loss(x, x_hat, mask)
    g = weight * fw_loss_grad(x, x_hat, mask)
    return CycleLoss(loss, g, g_x.vjp(y_hat, g), mask, y_hat, x_hat)
