"""Blur kernels, convolution, and synthetic degradation chains.

Boundary handling is half-sample symmetric reflection everywhere
(``d c b a | a b c d | d c b a``), i.e. numpy's ``"symmetric"`` pad mode.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from scipy import ndimage

from .imagecore import RasterImage

MASK64 = (1 << 64) - 1

# Augmentation ranges used by sample_spec. Our own defaults, not measured values.
AUGMENT_RANGES = {
    "gaussian_sigma": (0.5, 3.0),
    "defocus_radius": (2.0, 8.0),
    "motion_length": (3.0, 15.0),
    "spin_extent": (0.5, 3.0),
    "shot_photons": (500.0, 5000.0),
}


class KernelError(ValueError):
    pass


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class BlurKernel:
    """Odd-sized, non-negative, unit-sum 2-D kernel."""

    taps: np.ndarray

    def __post_init__(self):
        t = np.array(self.taps, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] != t.shape[1] or t.shape[0] % 2 == 0:
            raise KernelError(f"kernel must be square with odd size, got {t.shape}")
        if np.any(t < 0) or not np.all(np.isfinite(t)):
            raise KernelError("kernel taps must be finite and non-negative")
        if abs(t.sum() - 1.0) > 1e-6:
            raise KernelError(f"kernel taps sum to {t.sum()!r}, expected 1")
        t.setflags(write=False)
        object.__setattr__(self, "taps", t)

    @property
    def size(self) -> int:
        return self.taps.shape[0]

    @property
    def radius(self) -> int:
        return self.size // 2

    @classmethod
    def normalized(cls, taps: np.ndarray) -> "BlurKernel":
        taps = np.clip(np.asarray(taps, dtype=np.float64), 0.0, None)
        s = taps.sum()
        if s <= 0:
            raise KernelError("kernel has no positive mass")
        return cls(taps / s)

    def padded(self, size: int) -> np.ndarray:
        """Taps zero-padded (centered) to an odd `size`."""
        if size < self.size or size % 2 == 0:
            raise KernelError("padded size must be odd and >= kernel size")
        p = (size - self.size) // 2
        return np.pad(self.taps, p)

    def to_json(self) -> str:
        return json.dumps({"schema_version": 1, "size": self.size, "taps": self.taps.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "BlurKernel":
        doc = json.loads(text)
        return cls.normalized(np.asarray(doc["taps"], dtype=np.float64))


def identity_kernel() -> BlurKernel:
    return BlurKernel(np.ones((1, 1)))


def _subpixel_offsets(supersample: int) -> np.ndarray:
    return (np.arange(supersample) + 0.5) / supersample - 0.5


def disk_kernel(radius: float, supersample: int = 4) -> BlurKernel:
    """Uniform-disk defocus PSF with sub-pixel coverage weights."""
    if radius < 0:
        raise KernelError("radius must be >= 0")
    if supersample < 1:
        raise KernelError("supersample must be >= 1")
    half = int(math.ceil(radius))
    grid = np.arange(-half, half + 1, dtype=np.float64)
    sub = _subpixel_offsets(supersample)
    ys = (grid[:, None] + sub[None, :]).reshape(-1)
    inside = (ys[:, None] ** 2 + ys[None, :] ** 2) <= radius * radius + 1e-12
    size = 2 * half + 1
    cover = inside.reshape(size, supersample, size, supersample).sum(axis=(1, 3)).astype(np.float64)
    if cover.sum() == 0:
        # radius below the sub-sample spacing: all mass in the center tap
        return identity_kernel() if half == 0 else BlurKernel(np.pad(np.ones((1, 1)), half))
    return BlurKernel.normalized(cover)


def gaussian_profile(sigma: float) -> np.ndarray:
    half = int(math.ceil(3 * sigma))
    x = np.arange(-half, half + 1, dtype=np.float64)
    return np.exp(-(x * x) / (2 * sigma * sigma))


def gaussian_kernel(sigma: float) -> BlurKernel:
    """Isotropic Gaussian, size 2*ceil(3 sigma)+1."""
    if not sigma > 0:
        raise KernelError("sigma must be > 0")
    g = gaussian_profile(sigma)
    g = g / g.sum()
    return BlurKernel(np.outer(g, g))


def motion_kernel(length: float, angle: float, supersample: int = 8) -> BlurKernel:
    """Linear motion PSF: coverage of a 1-px-wide segment of `length` px.

    `angle` is in degrees, counter-clockwise from the +x axis with y pointing
    up the raster (so row index decreases for positive angles).
    """
    if length < 1:
        raise KernelError("motion length must be >= 1")
    if length == 1:
        # a single-pixel footprint, whatever its orientation
        return identity_kernel()
    theta = math.radians(angle)
    c, s = math.cos(theta), math.sin(theta)
    half = int(math.ceil(length / 2 + 1))
    grid = np.arange(-half, half + 1, dtype=np.float64)
    sub = _subpixel_offsets(supersample)
    pos = (grid[:, None] + sub[None, :]).reshape(-1)
    # rows run downward; flip to a y-up frame
    yy = -pos[:, None]
    xx = pos[None, :]
    along = xx * c + yy * s
    across = -xx * s + yy * c
    inside = (np.abs(along) <= length / 2) & (np.abs(across) <= 0.5)
    size = 2 * half + 1
    cover = inside.reshape(size, supersample, size, supersample).sum(axis=(1, 3)).astype(np.float64)
    # trim empty outer rings, keeping the kernel centered
    while cover.shape[0] > 1 and not (cover[0].any() or cover[-1].any() or cover[:, 0].any() or cover[:, -1].any()):
        cover = cover[1:-1, 1:-1]
    return BlurKernel.normalized(cover)


# -- convolution ---------------------------------------------------------------

def _check_fits(shape: tuple[int, ...], k: BlurKernel) -> None:
    if k.size > min(shape[-2:]):
        raise KernelError(f"kernel size {k.size} exceeds image {shape[-1]}x{shape[-2]}")


def convolve_plane_spatial(plane: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Direct shift-and-add convolution of a 2-D plane, reflect boundary."""
    r = taps.shape[0] // 2
    h, w = plane.shape
    padded = np.pad(plane.astype(np.float64), r, mode="symmetric")
    out = np.zeros((h, w), dtype=np.float64)
    size = taps.shape[0]
    for i in range(size):
        for j in range(size):
            t = taps[i, j]
            if t == 0:
                continue
            # convolution flips the kernel: out[y,x] += k[i,j] * in[y-(i-r), x-(j-r)]
            out += t * padded[size - 1 - i:size - 1 - i + h, size - 1 - j:size - 1 - j + w]
    return out


def kernel_otf(taps: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """rfft2 of a centered kernel embedded at the origin of an array of `shape`."""
    h, w = shape
    size = taps.shape[0]
    r = size // 2
    buf = np.zeros((h, w), dtype=np.float64)
    buf[:size, :size] = taps
    buf = np.roll(buf, (-r, -r), axis=(0, 1))
    return np.fft.rfft2(buf)


def convolve_plane_fft(plane: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """FFT convolution of a 2-D plane with reflect padding."""
    r = taps.shape[0] // 2
    h, w = plane.shape
    padded = np.pad(plane.astype(np.float64), r, mode="symmetric")
    spec = np.fft.rfft2(padded)
    spec *= kernel_otf(taps, padded.shape)
    out = np.fft.irfft2(spec, s=padded.shape)
    return out[r:r + h, r:r + w]


def convolve(img: RasterImage, k: BlurKernel, path: str = "fft") -> RasterImage:
    """Per-channel 2-D convolution with reflect boundaries."""
    _check_fits(img.shape, k)
    if k.size == 1:
        return img.with_data(img.data * np.float32(k.taps[0, 0]))
    if path == "fft":
        fn = convolve_plane_fft
    elif path == "spatial":
        fn = convolve_plane_spatial
    else:
        raise ValueError(f"unknown convolution path {path!r}")
    out = np.stack([fn(ch, k.taps) for ch in img.data]).astype(np.float32)
    return RasterImage.adopt(out, img.bit_depth_origin)


# -- spatially varying and stochastic steps -------------------------------------

def spin_blur(img: RasterImage, center: tuple[float, float] | None = None,
              extent: float = 1.0, samples: int = 32) -> RasterImage:
    """Average of `samples` bilinear rotations spanning [-extent/2, extent/2] degrees.

    `center` is (x, y) in pixel coordinates; defaults to the image center.
    """
    if samples < 1:
        raise SpecError("samples must be >= 1")
    if not extent > 0:
        raise SpecError("spin extent must be > 0")
    h, w = img.height, img.width
    cx, cy = center if center is not None else ((w - 1) / 2.0, (h - 1) / 2.0)
    angles = np.zeros(1) if samples == 1 else np.linspace(-extent / 2, extent / 2, samples)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    acc = np.zeros((img.channels, h, w), dtype=np.float64)
    for a in np.radians(angles):
        c, s = math.cos(a), math.sin(a)
        src_x = cx + c * dx - s * dy
        src_y = cy + s * dx + c * dy
        coords = np.stack([src_y, src_x])
        for ch in range(img.channels):
            acc[ch] += ndimage.map_coordinates(img.data[ch].astype(np.float64), coords,
                                               order=1, mode="reflect")
    return RasterImage.adopt((acc / len(angles)).astype(np.float32), img.bit_depth_origin)


def shot_noise(img: RasterImage, photons_at_full_scale: float, seed: int) -> RasterImage:
    """Poisson photon noise; a value of 1.0 corresponds to `photons_at_full_scale` counts."""
    if not photons_at_full_scale > 0:
        raise SpecError("photons_at_full_scale must be > 0")
    rng = np.random.Generator(np.random.PCG64(seed & MASK64))
    lam = np.clip(img.data.astype(np.float64), 0.0, None) * photons_at_full_scale
    counts = rng.poisson(lam)
    return RasterImage.adopt((counts / photons_at_full_scale).astype(np.float32), img.bit_depth_origin)


# -- declarative chains ----------------------------------------------------------

def splitmix64(x: int) -> int:
    """SplitMix64 output function applied to one 64-bit state increment."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def sub_seed(seed: int, step_index: int) -> int:
    return splitmix64((seed & MASK64) ^ splitmix64(step_index))


_REQUIRED = {
    "gaussian": ("sigma",),
    "defocus": ("radius",),
    "shot": ("photons",),
    "motion": ("length", "angle"),
    "spin": ("extent",),
}


@dataclass(frozen=True)
class DegradeSpec:
    """Ordered degradation steps plus the seed that drives every noise step.

    Each step is a dict with a ``kind`` key and that kind's parameters:

    ==========  ===========================================================
    gaussian    ``sigma`` (px, > 0)
    defocus     ``radius`` (px, >= 0), optional ``supersample`` (default 4)
    shot        ``photons`` (counts at full scale, > 0)
    motion      ``length`` (px, >= 1), ``angle`` (degrees)
    spin        ``extent`` (degrees, > 0), optional ``center`` [x, y],
                ``samples`` (default 32)
    ==========  ===========================================================
    """

    steps: tuple[dict[str, Any], ...]
    seed: int = 0

    def __post_init__(self):
        steps = tuple(dict(s) for s in self.steps)
        if not steps:
            raise SpecError("degradation spec needs at least one step")
        for i, step in enumerate(steps):
            _validate_step(i, step)
        object.__setattr__(self, "steps", steps)

    @classmethod
    def from_dict(cls, doc: dict) -> "DegradeSpec":
        if "steps" not in doc:
            raise SpecError("spec document lacks 'steps'")
        return cls(tuple(doc["steps"]), int(doc.get("seed", 0)))

    @classmethod
    def from_json(cls, text: str) -> "DegradeSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(doc)

    @classmethod
    def load(cls, source: str | Path) -> "DegradeSpec":
        """Parse inline JSON text, or read it from a file path."""
        text = str(source)
        if text.lstrip().startswith("{"):
            return cls.from_json(text)
        return cls.from_json(Path(source).read_text())

    def to_json(self) -> str:
        return json.dumps({"schema_version": 1, "seed": self.seed, "steps": list(self.steps)})


def _validate_step(i: int, step: dict) -> None:
    kind = step.get("kind")
    if kind not in _REQUIRED:
        raise SpecError(f"step {i}: unknown kind {kind!r}")
    for key in _REQUIRED[kind]:
        if key not in step:
            raise SpecError(f"step {i} ({kind}): missing {key!r}")
    checks = {
        "gaussian": step.get("sigma", 1) > 0,
        "defocus": step.get("radius", 0) >= 0,
        "shot": step.get("photons", 1) > 0,
        "motion": step.get("length", 1) >= 1,
        "spin": step.get("extent", 1) > 0 and step.get("samples", 32) >= 1,
    }
    if not checks[kind]:
        raise SpecError(f"step {i} ({kind}): parameter out of range: {step}")


def step_kernel(step: dict) -> BlurKernel | None:
    kind = step["kind"]
    if kind == "gaussian":
        return gaussian_kernel(float(step["sigma"]))
    if kind == "defocus":
        return disk_kernel(float(step["radius"]), int(step.get("supersample", 4)))
    if kind == "motion":
        return motion_kernel(float(step["length"]), float(step["angle"]))
    return None


def apply(spec: DegradeSpec, img: RasterImage) -> RasterImage:
    """Run every step of `spec` in order."""
    out = img
    for i, step in enumerate(spec.steps):
        k = step_kernel(step)
        if k is not None:
            out = convolve(out, k)
        elif step["kind"] == "shot":
            out = shot_noise(out, float(step["photons"]), sub_seed(spec.seed, i))
        elif step["kind"] == "spin":
            center = step.get("center")
            out = spin_blur(out, tuple(center) if center is not None else None,
                            float(step["extent"]), int(step.get("samples", 32)))
    return out


def sample_spec(seed: int, kinds: tuple[str, ...] = ("defocus", "shot")) -> DegradeSpec:
    """Draw a random chain over `kinds` using AUGMENT_RANGES."""
    rng = np.random.default_rng(seed)
    steps = []
    for kind in kinds:
        if kind == "gaussian":
            steps.append({"kind": kind, "sigma": float(rng.uniform(*AUGMENT_RANGES["gaussian_sigma"]))})
        elif kind == "defocus":
            steps.append({"kind": kind, "radius": float(rng.uniform(*AUGMENT_RANGES["defocus_radius"]))})
        elif kind == "motion":
            steps.append({"kind": kind, "length": float(rng.uniform(*AUGMENT_RANGES["motion_length"])),
                          "angle": float(rng.uniform(0, 180))})
        elif kind == "spin":
            steps.append({"kind": kind, "extent": float(rng.uniform(*AUGMENT_RANGES["spin_extent"]))})
        elif kind == "shot":
            steps.append({"kind": kind, "photons": float(rng.uniform(*AUGMENT_RANGES["shot_photons"]))})
        else:
            raise SpecError(f"unknown kind {kind!r}")
    return DegradeSpec(tuple(steps), seed)


def rescaled_radius(radius: int, factor: int) -> int:
    """Radius of a kernel after integrating it over factor x factor pixels."""
    return int(math.ceil((radius + 0.5) / factor - 0.5))


def rescale_kernel(k: BlurKernel, factor: int) -> BlurKernel:
    """The kernel as seen after area-downscaling the image by `factor`.

    Taps are treated as a piecewise-constant PSF and integrated over the
    coarser pixel footprints (centered on the kernel origin).
    """
    if factor < 1:
        raise KernelError("factor must be >= 1")
    if factor == 1 or k.size == 1:
        return k
    r = k.radius
    new_r = rescaled_radius(r, factor)
    old = np.arange(-r, r + 1, dtype=np.float64)
    new = np.arange(-new_r, new_r + 1, dtype=np.float64) * factor
    lo = np.maximum(old[None, :] - 0.5, new[:, None] - factor / 2)
    hi = np.minimum(old[None, :] + 0.5, new[:, None] + factor / 2)
    m = np.clip(hi - lo, 0.0, None)
    return BlurKernel.normalized(m @ k.taps @ m.T)
