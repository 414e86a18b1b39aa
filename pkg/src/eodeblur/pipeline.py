"""Tiled, memory-budgeted restoration chain: load, tile, restore, stitch, store, report.

Tiles are restored by a bounded thread pool and blended back in grid order,
so the output does not depend on the worker count or on completion order.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
import time
import warnings
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .deconv import richardson_lucy, wiener
from .degrade import BlurKernel, rescale_kernel, rescaled_radius
from .imagecore import (RasterImage, accumulate_tile, downscale_plane, load_raster, plan_tiles,
                        save_raster, upscale_plane)
from .metrics import QualityReport, assess, sobel_edges
from .neural.model import Architecture, ModelWeights, activation_floats, restore_array

BACKENDS = ("wiener", "richardson_lucy", "neural")
MODES = ("tile_native", "downscale_process_upscale")

ENV_OVERRIDES = {
    "EODEBLUR_MEMORY_BUDGET_MB": ("memory_budget_mb", float),
    "EODEBLUR_VIRTUAL_BUDGET_MB": ("virtual_budget_mb", float),
    "EODEBLUR_WORKERS": ("workers", int),
}

MB = 1024 * 1024


class BudgetError(RuntimeError):
    """The predicted peak memory exceeds the hard (virtual) budget."""


class AssetError(ValueError):
    """The supplied kernel or weights do not suit the chosen backend."""


@dataclass(frozen=True)
class PipelineConfig:
    tile_size: int = 256
    overlap: int = 32
    backend: str = "wiener"
    memory_budget_mb: float = 300.0
    virtual_budget_mb: float = 2048.0
    workers: int = 3
    mode: str = "downscale_process_upscale"
    scale_factor: int = 4
    nsr: float = 1e-2
    rl_iterations: int = 60

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not 0 <= self.overlap < self.tile_size:
            raise ValueError("need 0 <= overlap < tile_size")
        if self.memory_budget_mb <= 0 or self.virtual_budget_mb <= 0:
            raise ValueError("budgets must be positive")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.scale_factor < 1:
            raise ValueError("scale_factor must be >= 1")
        if self.nsr < 0 or self.rl_iterations < 1:
            raise ValueError("nsr must be >= 0 and rl_iterations >= 1")

    @property
    def factor(self) -> int:
        return self.scale_factor if self.mode == "downscale_process_upscale" else 1

    def with_env(self, environ: Mapping[str, str] | None = None) -> "PipelineConfig":
        """Apply EODEBLUR_MEMORY_BUDGET_MB / _VIRTUAL_BUDGET_MB / _WORKERS overrides."""
        environ = os.environ if environ is None else environ
        changes = {}
        for var, (name, cast) in ENV_OVERRIDES.items():
            if var in environ:
                changes[name] = cast(environ[var])
        return replace(self, **changes) if changes else self

    @classmethod
    def from_ini(cls, path: str | Path, section: str = "pipeline", **overrides) -> "PipelineConfig":
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(path)
        values: dict = {}
        if parser.has_section(section):
            types = {f.name: f.type for f in fields(cls)}
            for key, raw in parser.items(section):
                if key not in types:
                    raise ValueError(f"unknown [{section}] key {key!r}")
                kind = types[key]
                values[key] = int(raw) if kind in ("int", int) else float(raw) if kind in ("float", float) else raw
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass
class RestorationResult:
    output: RasterImage
    elapsed_seconds: float
    estimated_peak_mb: float
    tiles_processed: int
    backend: str
    report: QualityReport | None = None

    def to_dict(self) -> dict:
        doc = {
            "schema_version": 1,
            "backend": self.backend,
            "width": self.output.width,
            "height": self.output.height,
            "channels": self.output.channels,
            "tiles_processed": self.tiles_processed,
            "elapsed_seconds": self.elapsed_seconds,
            "estimated_peak_mb": self.estimated_peak_mb,
        }
        if self.report is not None:
            doc["report"] = self.report.to_dict()
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass(frozen=True)
class Assets:
    kernel: BlurKernel | None = None
    weights: ModelWeights | None = None


# -- memory estimate --------------------------------------------------------------
#
# Sizes are counted in float32 slots (4 bytes); a float64 plane of the padded
# tile is 2 slots per pixel and a half-plane complex spectrum is also 2. For
# wiener the padded tile is the 2h x 2w mirror extension.
#
# wiener, per padded pixel (13): OTF 2, padded channel 2, spectrum 2,
#   denominator 1, filtered spectrum 2, inverse-FFT work copy 2, output 2.
# richardson_lucy, per padded pixel (18): observation 2, OTF 2, adjoint OTF 2,
#   estimate 2, reblurred estimate 2, ratio 2, product spectrum 2, inverse-FFT
#   work copy 2, output 2.
# Both also hold a clipped float32 copy of the tile (C slots per pixel).
# neural: activation_floats(), the graph's live activations at their peak.
# In downscale_process_upscale mode bilinear upscaling later holds three
# float64 planes of the full tile (6 C slots per pixel); it runs after the
# backend has released its buffers, so the larger of the two counts.
# Every in-flight tile finally owns its float32 result (C slots per pixel).
# The stitching thread adds one tile's blend weights (float64 and float32
# copies, 3 slots) and the weighted tile (C slots).
WIENER_FLOATS = 13
RL_FLOATS = 18
RESAMPLE_FLOATS = 6


def _backend_area(backend: str, kernel_size: int, h: int, w: int) -> int:
    """Pixels in the domain the classical backend filters for an h x w tile."""
    if kernel_size == 1:
        return h * w
    if backend == "wiener":
        return 4 * h * w
    pad = 2 * (kernel_size // 2)
    return (h + 2 * pad) * (w + 2 * pad)


def tile_working_set_bytes(config: PipelineConfig, backend: str, channels: int,
                           kernel_size: int = 15, arch: Architecture = Architecture()) -> float:
    """Peak bytes one worker needs for one full-size tile."""
    t, f = config.tile_size, config.factor
    h = w = -(-t // f)
    if backend == "neural":
        h, w = -(-h // 4) * 4, -(-w // 4) * 4
        ws = 4.0 * activation_floats(arch, h, w)
    else:
        k = kernel_size if f == 1 else 2 * rescaled_radius(kernel_size // 2, f) + 1
        area = _backend_area(backend, k, h, w)
        per = WIENER_FLOATS if backend == "wiener" else RL_FLOATS
        ws = 4.0 * (per * area + channels * h * w)
    if f > 1:
        # resampling runs after the backend has released its buffers
        ws = max(ws, 4.0 * RESAMPLE_FLOATS * channels * t * t)
    return ws + 4.0 * channels * t * t


def estimate_peak_mb(config: PipelineConfig, width: int, height: int, channels: int = 3,
                     backend: str | None = None, kernel_size: int = 15,
                     arch: Architecture = Architecture()) -> float:
    """Closed-form peak: input + output planes + stitch buffer + workers x per-tile working set."""
    backend = backend or config.backend
    planes = 2 * 4.0 * channels * width * height
    ws = tile_working_set_bytes(config, backend, channels, kernel_size, arch)
    stitch = 4.0 * (3 + channels) * config.tile_size ** 2
    return (planes + stitch + config.workers * ws) / MB


# -- tile restoration ---------------------------------------------------------------

def _check_assets(backend: str, assets: Assets) -> None:
    if backend in ("wiener", "richardson_lucy"):
        if not isinstance(assets.kernel, BlurKernel):
            raise AssetError(f"backend {backend!r} needs a BlurKernel")
    elif not isinstance(assets.weights, ModelWeights):
        raise AssetError("backend 'neural' needs ModelWeights")


def _pad_to_multiple(planes: np.ndarray, m: int) -> np.ndarray:
    h, w = planes.shape[1:]
    ph, pw = (-h) % m, (-w) % m
    if ph == 0 and pw == 0:
        return planes
    return np.pad(planes, ((0, 0), (0, ph), (0, pw)), mode="symmetric")


def _restore_planes(planes: np.ndarray, backend: str, config: PipelineConfig,
                    kernel: BlurKernel | None, weights: ModelWeights | None) -> np.ndarray:
    if backend == "neural":
        h, w = planes.shape[1:]
        if weights.arch.in_channels != planes.shape[0]:
            raise AssetError(f"weights expect {weights.arch.in_channels} channels, image has {planes.shape[0]}")
        out = restore_array(weights, _pad_to_multiple(planes, 4).astype(np.float32))[:, :h, :w]
        return np.clip(out, 0.0, 1.0)
    img = RasterImage.adopt(np.clip(planes, 0.0, 1.0).astype(np.float32, copy=False))
    if kernel.size > min(img.height, img.width):
        raise AssetError(f"kernel size {kernel.size} exceeds tile {img.width}x{img.height}")
    if backend == "wiener":
        return wiener(img, kernel, config.nsr, boundary="symmetric").data
    return np.clip(richardson_lucy(img, kernel, config.rl_iterations).data, 0.0, 1.0)


def restore_tile(tile: np.ndarray, backend: str, config: PipelineConfig, kernel: BlurKernel | None,
                 weights: ModelWeights | None) -> np.ndarray:
    """Restore one (C, h, w) tile, optionally through the downscaled domain."""
    f = config.factor
    if f == 1:
        return _restore_planes(tile, backend, config, kernel, weights).astype(np.float32, copy=False)
    h, w = tile.shape[1:]
    small = downscale_plane(_pad_to_multiple(tile, f), f)
    restored = _restore_planes(small, backend, config, kernel, weights)
    return upscale_plane(restored, f)[:, :h, :w].astype(np.float32)


def restore(img: RasterImage, config: PipelineConfig, assets: Assets | BlurKernel | ModelWeights,
            reference: RasterImage | None = None) -> RestorationResult:
    """Tile, restore with a bounded worker pool, and blend back deterministically.

    Raises BudgetError before touching any tile when the predicted peak
    exceeds ``virtual_budget_mb``; warns when it exceeds ``memory_budget_mb``.
    """
    if isinstance(assets, BlurKernel):
        assets = Assets(kernel=assets)
    elif isinstance(assets, ModelWeights):
        assets = Assets(weights=assets)
    backend = config.backend
    _check_assets(backend, assets)
    kernel = assets.kernel
    if kernel is not None and config.factor > 1:
        kernel = rescale_kernel(kernel, config.factor)
    arch = assets.weights.arch if assets.weights is not None else Architecture()
    ksize = assets.kernel.size if assets.kernel is not None else 1
    peak = estimate_peak_mb(config, img.width, img.height, img.channels, backend, ksize, arch)
    if peak > config.virtual_budget_mb:
        raise BudgetError(f"estimated peak {peak:.1f} MB exceeds virtual budget {config.virtual_budget_mb} MB")
    if peak > config.memory_budget_mb:
        warnings.warn(f"estimated peak {peak:.1f} MB exceeds RAM budget {config.memory_budget_mb} MB",
                      ResourceWarning, stacklevel=2)

    start = time.perf_counter()
    grid = plan_tiles(img.width, img.height, config.tile_size, config.overlap)
    out = np.zeros(img.data.shape, dtype=np.float32)
    src = img.data

    def job(index: int) -> np.ndarray:
        x, y, w, h = grid.tiles[index]
        return restore_tile(src[:, y:y + h, x:x + w], backend, config, kernel, assets.weights)

    done = 0
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        pending: deque = deque()
        for i in range(len(grid)):
            pending.append((i, pool.submit(job, i)))
            if len(pending) >= config.workers:
                j, fut = pending.popleft()
                accumulate_tile(out, fut.result(), grid, j)
                done += 1
        while pending:
            j, fut = pending.popleft()
            accumulate_tile(out, fut.result(), grid, j)
            done += 1
    np.clip(out, 0.0, 1.0, out=out)
    result = RasterImage.adopt(out, img.bit_depth_origin)
    elapsed = max(time.perf_counter() - start, 1e-9)
    report = assess(result, reference) if reference is not None else None
    return RestorationResult(result, elapsed, peak, done, backend, report)


# -- capture chain ------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _store(write, store_dir: Path, stem: str, suffix: str) -> tuple[Path, str]:
    """Write to a temp name, then rename to ``<stem>_<hash12><suffix>``."""
    tmp = store_dir / f".{stem}.tmp{suffix}"
    write(tmp)
    digest = _sha256(tmp)
    final = store_dir / f"{stem}_{digest[:12]}{suffix}"
    os.replace(tmp, final)
    return final, digest


def run_capture_chain(request: Mapping | str | Path, config: PipelineConfig, assets: Assets,
                      store_dir: str | Path) -> dict[str, Path]:
    """Process one capture request and store its artifacts.

    The request is a mapping (or JSON text / file) with keys ``id``,
    ``input_path``, optional ``backend``, ``reference_path`` and ``edges``
    (a Sobel threshold). Writes the restored image, a JSON result and, when
    requested, the edge map; every filename carries the request id and the
    first 12 hex digits of the file's SHA-256. The JSON is named after the
    restored image's hash and records it, since its timing fields vary
    between runs.
    """
    if not isinstance(request, Mapping):
        text = str(request)
        request = json.loads(Path(text).read_text() if not text.lstrip().startswith("{") else text)
    for key in ("id", "input_path"):
        if key not in request:
            raise ValueError(f"request lacks {key!r}")
    rid = str(request["id"])
    if not rid or any(c in rid for c in "/\\") or rid.startswith("."):
        raise ValueError(f"unsafe request id {rid!r}")
    store = Path(store_dir)
    store.mkdir(parents=True, exist_ok=True)
    if not os.access(store, os.W_OK):
        raise PermissionError(f"store directory {store} is not writable")
    if request.get("backend"):
        config = replace(config, backend=request["backend"])
    img = load_raster(request["input_path"])
    reference = load_raster(request["reference_path"]) if request.get("reference_path") else None
    result = restore(img, config, assets, reference)

    paths: dict[str, Path] = {}
    paths["image"], image_hash = _store(lambda p: save_raster(result.output, p), store, f"{rid}_restored", ".png")
    doc = result.to_dict()
    doc.update({"request_id": rid, "image_file": paths["image"].name, "image_sha256": image_hash})
    if request.get("edges") is not None:
        edges = sobel_edges(result.output, float(request["edges"]))
        edge_img = RasterImage.adopt(edges[None].astype(np.float32))
        paths["edges"], edge_hash = _store(lambda p: save_raster(edge_img, p), store, f"{rid}_edges", ".png")
        doc.update({"edges_file": paths["edges"].name, "edges_sha256": edge_hash,
                    "edge_threshold": float(request["edges"]), "edge_pixels": int(edges.sum())})
    json_path = store / f"{rid}_result_{image_hash[:12]}.json"
    json_path.write_text(json.dumps(doc, indent=2))
    paths["result"] = json_path
    return paths
