"""Raster container, file I/O, resampling, patch extraction and tiling."""

from __future__ import annotations

import json
from functools import lru_cache
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError


class RasterError(ValueError):
    """Raised for malformed raster input or geometry."""


class UnsupportedFormatError(RasterError):
    pass


class TruncatedFileError(RasterError):
    pass


LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class RasterImage:
    """Planar float32 raster, shape (channels, height, width), nominal range [0, 1].

    The array is made read-only on construction so instances can be shared
    between worker threads.
    """

    data: np.ndarray
    bit_depth_origin: int = 8

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[0] not in (1, 3):
            raise RasterError(f"expected (1|3, H, W) planes, got shape {arr.shape}")
        if arr.shape[1] == 0 or arr.shape[2] == 0:
            raise RasterError("zero-sized raster")
        if not np.all(np.isfinite(arr)):
            raise RasterError("raster contains NaN or Inf")
        if arr is self.data or arr.base is not None:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def adopt(cls, data: np.ndarray, bit_depth_origin: int = 8) -> "RasterImage":
        """Wrap a float32 (C, H, W) array without copying; the array is frozen."""
        if data.dtype != np.float32 or data.ndim != 3 or data.shape[0] not in (1, 3):
            return cls(data, bit_depth_origin)
        if not np.all(np.isfinite(data)):
            raise RasterError("raster contains NaN or Inf")
        data.setflags(write=False)
        obj = object.__new__(cls)
        object.__setattr__(obj, "data", data)
        object.__setattr__(obj, "bit_depth_origin", bit_depth_origin)
        return obj

    def with_data(self, data: np.ndarray) -> "RasterImage":
        return RasterImage(data, bit_depth_origin=self.bit_depth_origin)


@dataclass(frozen=True)
class SensorSpec:
    """Capture geometry of the payload camera."""

    width: int = 2048
    height: int = 1536
    gsd_min: float = 37.5
    gsd_max: float = 41.0
    jpeg_at_origin: bool = True

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor dimensions must be positive")
        if not self.gsd_min < self.gsd_max:
            raise ValueError("gsd_min must be below gsd_max")


def luminance(img: RasterImage) -> np.ndarray:
    """Return the luma plane (H, W) as float64."""
    d = img.data.astype(np.float64)
    if img.channels == 1:
        return d[0]
    r, g, b = LUMA_WEIGHTS
    return r * d[0] + g * d[1] + b * d[2]


def to_uint8(data: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] floats to bytes, rounding half up, clamped."""
    return np.clip(np.floor(np.asarray(data, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(np.uint8)


# -- I/O ---------------------------------------------------------------------

_PNM_SUFFIXES = {".pgm", ".ppm", ".pnm"}


def load_raster(path: str | Path) -> RasterImage:
    """Read an 8-bit PGM (P5), PPM (P6) or PNG file into a [0, 1] raster."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) == 0:
        raise TruncatedFileError(f"{path}: empty file")
    if raw[:2] in (b"P5", b"P6"):
        pass
    elif raw[:8] == b"\x89PNG\r\n\x1a\n":
        pass
    else:
        raise UnsupportedFormatError(f"{path}: not a binary PGM/PPM or PNG file")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("L", "RGB"):
                arr = np.asarray(im, dtype=np.uint8)
            elif mode == "P" or mode == "RGBA" or mode == "LA":
                arr = np.asarray(im.convert("RGB" if mode != "LA" else "L"), dtype=np.uint8)
            elif mode == "1":
                arr = np.asarray(im.convert("L"), dtype=np.uint8)
            else:
                raise UnsupportedFormatError(f"{path}: unsupported pixel mode {mode!r} (8-bit only)")
    except UnidentifiedImageError as exc:
        raise UnsupportedFormatError(f"{path}: {exc}") from exc
    except UnsupportedFormatError:
        raise
    except (OSError, SyntaxError, ValueError) as exc:
        raise TruncatedFileError(f"{path}: {exc}") from exc
    if arr.size == 0:
        raise RasterError(f"{path}: zero dimensions")
    planes = arr[None] if arr.ndim == 2 else np.moveaxis(arr, -1, 0)
    return RasterImage(planes.astype(np.float32) / np.float32(255.0), bit_depth_origin=8)


def save_raster(img: RasterImage, path: str | Path) -> Path:
    """Write an 8-bit PNG, or PGM/PPM when the suffix asks for it."""
    path = Path(path)
    u8 = to_uint8(img.data)
    pil = Image.fromarray(u8[0] if img.channels == 1 else np.moveaxis(u8, 0, -1))
    suffix = path.suffix.lower()
    if suffix in _PNM_SUFFIXES:
        if img.channels == 3 and suffix == ".pgm":
            raise UnsupportedFormatError("PGM holds a single channel")
        pil.save(path, format="PPM")
    else:
        pil.save(path, format="PNG")
    return path


def save_plane_pgm(plane: np.ndarray, path: str | Path, normalize: bool = True) -> Path:
    """Dump a 2-D float plane as an 8-bit PGM for inspection."""
    plane = np.asarray(plane, dtype=np.float64)
    if normalize:
        lo, hi = float(plane.min()), float(plane.max())
        plane = (plane - lo) / (hi - lo) if hi > lo else np.zeros_like(plane)
    Image.fromarray(to_uint8(plane)).save(Path(path), format="PPM")
    return Path(path)


# -- resampling --------------------------------------------------------------

def downscale_plane(arr: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean an (..., H, W) array by an integer factor."""
    *lead, h, w = arr.shape
    if h % factor or w % factor:
        raise RasterError(f"dims {w}x{h} not divisible by factor {factor}")
    blocks = arr.reshape(*lead, h // factor, factor, w // factor, factor)
    return blocks.mean(axis=(-3, -1), dtype=np.float64)


def downscale(img: RasterImage, factor: int) -> RasterImage:
    """Area-average resampling by an integer factor."""
    if factor < 1:
        raise RasterError("factor must be >= 1")
    if factor == 1:
        return img
    return img.with_data(downscale_plane(img.data, factor).astype(np.float32))


def upscale_plane(arr: np.ndarray, factor: int) -> np.ndarray:
    """Bilinear upsampling by an integer factor with pixel-center alignment."""
    if factor == 1:
        return arr
    *lead, h, w = arr.shape

    def axis_weights(n):
        pos = (np.arange(n * factor) + 0.5) / factor - 0.5
        pos = np.clip(pos, 0, n - 1)
        i0 = np.floor(pos).astype(np.intp)
        i1 = np.minimum(i0 + 1, n - 1)
        t = pos - i0
        return i0, i1, t

    r0, r1, ty = axis_weights(h)
    c0, c1, tx = axis_weights(w)
    rows = arr[..., r0, :] * (1 - ty)[:, None] + arr[..., r1, :] * ty[:, None]
    return rows[..., c0] * (1 - tx) + rows[..., c1] * tx


def upscale(img: RasterImage, factor: int) -> RasterImage:
    return img.with_data(upscale_plane(img.data, factor).astype(np.float32))


def extract_patches(img: RasterImage, size: int, stride: int) -> list[RasterImage]:
    """Row-major list of every fully interior size x size patch."""
    if stride < 1:
        raise RasterError("stride must be >= 1")
    if size < 1 or size > min(img.width, img.height):
        raise RasterError(f"patch size {size} exceeds image {img.width}x{img.height}")
    patches = []
    for y in range(0, img.height - size + 1, stride):
        for x in range(0, img.width - size + 1, stride):
            patches.append(img.with_data(img.data[:, y:y + size, x:x + size]))
    return patches


# -- tiling ------------------------------------------------------------------

@dataclass(frozen=True)
class TileGrid:
    """Overlapping tile layout. Rectangles are (x, y, w, h), row-major."""

    width: int
    height: int
    tile_size: int
    overlap: int
    tiles: tuple[tuple[int, int, int, int], ...] = field(default=())
    xs: tuple[int, ...] = field(default=())
    ys: tuple[int, ...] = field(default=())

    def __len__(self):
        return len(self.tiles)

    def to_json(self) -> str:
        return json.dumps({
            "schema_version": 1,
            "width": self.width,
            "height": self.height,
            "tile_size": self.tile_size,
            "overlap": self.overlap,
            "tiles": [list(t) for t in self.tiles],
        })

    @classmethod
    def from_json(cls, text: str) -> "TileGrid":
        doc = json.loads(text)
        return plan_tiles(doc["width"], doc["height"], doc["tile_size"], doc["overlap"])


def plan_tiles(width: int, height: int, tile_size: int, overlap: int) -> TileGrid:
    """Cover a width x height image with tiles overlapping by `overlap` px.

    Interior neighbours share exactly `overlap` pixels. When the image is not
    a whole number of steps wide, the last tile along that axis is shortened
    (clamped at the border) rather than shifted, so every adjacent pair keeps
    the same overlap.
    """
    if not 0 <= overlap < tile_size:
        raise RasterError("need 0 <= overlap < tile_size")
    if width <= 0 or height <= 0:
        raise RasterError("zero-sized image")

    def spans(n):
        if n <= tile_size:
            return [(0, n)]
        step = tile_size - overlap
        out = []
        start = 0
        while True:
            end = min(start + tile_size, n)
            out.append((start, end - start))
            if end == n:
                break
            start += step
        return out

    xspans, yspans = spans(width), spans(height)
    tiles = tuple((x, y, w, h) for (y, h) in yspans for (x, w) in xspans)
    return TileGrid(width, height, tile_size, overlap, tiles,
                    tuple(s for s, _ in xspans), tuple(s for s, _ in yspans))


def crop_tiles(img: RasterImage, grid: TileGrid) -> list[RasterImage]:
    if (img.width, img.height) != (grid.width, grid.height):
        raise RasterError("image does not match grid dimensions")
    return [img.with_data(img.data[:, y:y + h, x:x + w]) for x, y, w, h in grid.tiles]


def blend_weights(grid: TileGrid, index: int) -> np.ndarray:
    """Per-tile (h, w) stitching weights; over all tiles they sum to one."""
    x, y, w, h = grid.tiles[index]
    wx = _axis_weights(grid.xs, grid.width, grid.tile_size)[grid.xs.index(x)]
    wy = _axis_weights(grid.ys, grid.height, grid.tile_size)[grid.ys.index(y)]
    return np.outer(wy, wx)


@lru_cache(maxsize=64)
def _axis_weights(starts: tuple[int, ...], n: int, tile_size: int) -> tuple[np.ndarray, ...]:
    """1-D weights of every tile along one axis, normalized to sum to one.

    Each tile ramps in (sin^2) over its overlap with the previous tile and out
    (cos^2) over its overlap with the next. When overlap <= tile_size / 2 only
    neighbours meet and the ramps already sum to one; larger overlaps let
    non-adjacent tiles meet, which the normalization absorbs.
    """
    ends = [min(s + tile_size, n) for s in starts]
    raw = [_raw_ramp(j, starts, ends) for j in range(len(starts))]
    total = np.zeros(n, dtype=np.float64)
    for s0, e0, r in zip(starts, ends, raw):
        total[s0:e0] += r
    out = []
    for s0, e0, r in zip(starts, ends, raw):
        wts = r / total[s0:e0]
        wts.setflags(write=False)
        out.append(wts)
    return tuple(out)


def _raw_ramp(i: int, starts: Sequence[int], ends: Sequence[int]) -> np.ndarray:
    start, end = starts[i], ends[i]
    w = np.ones(end - start, dtype=np.float64)
    coords = np.arange(start, end) + 0.5
    if i > 0:
        a, b = starts[i], ends[i - 1]
        band = (coords >= a) & (coords < b)
        w[band] = np.sin(0.5 * np.pi * (coords[band] - a) / (b - a)) ** 2
    if i < len(starts) - 1:
        a, b = starts[i + 1], ends[i]
        band = (coords >= a) & (coords < b)
        w[band] *= np.cos(0.5 * np.pi * (coords[band] - a) / (b - a)) ** 2
    return w


def stitch(tiles: Sequence[RasterImage], grid: TileGrid) -> RasterImage:
    """Blend tiles back into one raster with partition-of-unity weights."""
    if len(tiles) != len(grid.tiles):
        raise RasterError(f"expected {len(grid.tiles)} tiles, got {len(tiles)}")
    channels = tiles[0].channels if tiles else 1
    out = np.zeros((channels, grid.height, grid.width), dtype=np.float32)
    for i, tile in enumerate(tiles):
        accumulate_tile(out, tile.data, grid, i)
    return RasterImage.adopt(out, bit_depth_origin=tiles[0].bit_depth_origin)


def accumulate_tile(out: np.ndarray, tile: np.ndarray, grid: TileGrid, index: int) -> None:
    """Add one weighted tile into the output buffer in place."""
    x, y, w, h = grid.tiles[index]
    if tile.shape[1:] != (h, w) or tile.shape[0] != out.shape[0]:
        raise RasterError(f"tile {index} has shape {tile.shape}, grid expects ({out.shape[0]}, {h}, {w})")
    weights = blend_weights(grid, index)
    region = out[:, y:y + h, x:x + w]
    if np.all(weights == 1.0):
        region += tile
    else:
        region += tile * weights.astype(np.float32)
