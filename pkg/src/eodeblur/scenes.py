"""Synthetic Sentinel-2-like RGB scenes: field parcels, roads, a river, texture.

Scenes are rendered at twice the target resolution and area-averaged down,
so edges carry realistic partial-pixel mixing, then contrast-stretched the way
RGB composites are usually displayed (1st-99th percentile to [0.05, 0.95]).
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .imagecore import RasterImage, downscale_plane

# reflectance-like RGB triples for land-cover classes
_PALETTE = np.array([
    [0.22, 0.35, 0.16],   # crop
    [0.30, 0.42, 0.20],   # young crop
    [0.45, 0.40, 0.30],   # bare soil
    [0.55, 0.50, 0.38],   # dry field
    [0.15, 0.25, 0.12],   # forest
    [0.62, 0.58, 0.52],   # built-up
    [0.38, 0.46, 0.28],   # grassland
])
_WATER = np.array([0.08, 0.14, 0.22])
_ROAD = np.array([0.70, 0.68, 0.64])


def _parcels(rng: np.random.Generator, h: int, w: int, n_cells: int) -> np.ndarray:
    pts = rng.uniform(0, 1, size=(n_cells, 2)) * [h, w]
    yy, xx = np.mgrid[0:h, 0:w]
    _, labels = cKDTree(pts).query(np.column_stack([yy.ravel(), xx.ravel()]))
    return labels.reshape(h, w)


def _texture(rng: np.random.Generator, h: int, w: int, scale: float) -> np.ndarray:
    noise = rng.standard_normal((h, w))
    return ndimage.gaussian_filter(noise, scale, mode="wrap") * scale


def render_scene(size: int | tuple[int, int], seed: int, n_parcels: int | None = None,
                 roads: int = 3, river: bool = True, stretch: bool = True) -> RasterImage:
    """Render a deterministic RGB scene of `size` (square or (h, w))."""
    h, w = (size, size) if isinstance(size, int) else size
    H, W = 2 * h, 2 * w
    rng = np.random.default_rng(seed)
    if n_parcels is None:
        n_parcels = max(6, int(h * w / 110))
    labels = _parcels(rng, H, W, n_parcels)
    colors = _PALETTE[rng.integers(0, len(_PALETTE), n_parcels)]
    colors = colors * rng.uniform(0.85, 1.15, size=(n_parcels, 1))
    img = colors[labels].transpose(2, 0, 1)

    # within-parcel texture: fine plus coarse
    tex = 0.04 * _texture(rng, H, W, 1.0) + 0.03 * _texture(rng, H, W, 6.0)
    img = img * (1.0 + tex[None])

    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    for _ in range(roads):
        ang = rng.uniform(0, np.pi)
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        dist = np.abs((xx - cx) * np.sin(ang) - (yy - cy) * np.cos(ang))
        width = rng.uniform(1.5, 3.5)
        mask = dist < width
        img[:, mask] = _ROAD[:, None]

    if river:
        amp = rng.uniform(0.05, 0.15) * H
        freq = rng.uniform(1.0, 2.5)
        phase = rng.uniform(0, 2 * np.pi)
        base = rng.uniform(0.3, 0.7) * H
        width = rng.uniform(3.0, 7.0)
        # dense polyline raster, then distance to it
        n = 4 * (H + W)
        t = np.linspace(0, 1, n)
        ry = base + amp * np.sin(2 * np.pi * freq * t + phase)
        rx = t * (W - 1)
        line = np.zeros((H, W), dtype=bool)
        iy = np.clip(np.round(ry).astype(int), 0, H - 1)
        line[iy, np.round(rx).astype(int)] = True
        dist = ndimage.distance_transform_edt(~line)
        mask = dist < width
        img[:, mask] = _WATER[:, None] * (1 + 0.02 * tex[mask])[None]

    img = np.clip(img, 0.0, 1.0)
    small = downscale_plane(img, 2)
    if stretch:
        lo, hi = np.percentile(small, [1, 99])
        small = np.clip((small - lo) / (hi - lo) * 0.9 + 0.05, 0.0, 1.0)
    return RasterImage.adopt(small.astype(np.float32))
