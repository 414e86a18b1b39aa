"""Frequency-domain analysis and kernel estimation from degraded/reference pairs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .degrade import BlurKernel, KernelError, convolve_plane_fft, disk_kernel
from .imagecore import RasterImage, luminance

APODIZE_FRACTION = 0.08
EPS_SCALE = 1e-2


def fft2(plane: np.ndarray) -> np.ndarray:
    """Forward 2-D DFT (unnormalized), complex128."""
    return np.fft.fft2(np.asarray(plane, dtype=np.float64))


def ifft2(spectrum: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(spectrum)


def _as_plane(img: RasterImage | np.ndarray) -> np.ndarray:
    if isinstance(img, RasterImage):
        return luminance(img)
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D plane or a RasterImage")
    return arr


def apodization_window(h: int, w: int, fraction: float = APODIZE_FRACTION) -> np.ndarray:
    """Separable window: raised-cosine ramps over `fraction` of each border, flat inside."""

    def ramp(n):
        win = np.ones(n)
        nb = int(math.ceil(fraction * n))
        if nb > 0:
            edge = 0.5 * (1 - np.cos(np.pi * (np.arange(nb) + 0.5) / nb))
            win[:nb] = edge
            win[n - nb:] = edge[::-1]
        return win

    return np.outer(ramp(h), ramp(w))


def log_spectrum(img: RasterImage | np.ndarray, apodize: bool = False) -> np.ndarray:
    """log(1 + |FFT|) of the luminance plane, DC shifted to the center."""
    plane = _as_plane(img)
    if apodize:
        plane = plane * apodization_window(*plane.shape)
    return np.fft.fftshift(np.log1p(np.abs(fft2(plane))))


@dataclass(frozen=True)
class SpectralProfile:
    radial_frequency: np.ndarray
    log_magnitude: np.ndarray

    @property
    def bins(self) -> int:
        return len(self.radial_frequency)

    def to_json(self) -> str:
        return json.dumps({
            "schema_version": 1,
            "bins": self.bins,
            "radial_frequency": self.radial_frequency.tolist(),
            "log_magnitude": self.log_magnitude.tolist(),
        })


def radial_frequency_map(h: int, w: int) -> np.ndarray:
    """|f| in cycles/pixel for a DC-centered (fftshifted) h x w plane."""
    fy = (np.arange(h) - h // 2) / h
    fx = (np.arange(w) - w // 2) / w
    return np.hypot(fy[:, None], fx[None, :])


def radial_profile(spectrum_plane: np.ndarray, bins: int) -> SpectralProfile:
    """Mean of a centered spectrum over equal-width radial frequency bins.

    Bins span [0, sqrt(2)/2] cycles/pixel. Bins that no sample falls into are
    filled by linear interpolation from their neighbours.
    """
    if bins < 2:
        raise ValueError("need at least 2 bins")
    plane = np.asarray(spectrum_plane, dtype=np.float64)
    rmax = 0.5 * math.sqrt(2.0)
    r = radial_frequency_map(*plane.shape)
    idx = np.minimum((r / rmax * bins).astype(np.intp), bins - 1)
    sums = np.bincount(idx.ravel(), weights=plane.ravel(), minlength=bins)
    counts = np.bincount(idx.ravel(), minlength=bins)
    centers = (np.arange(bins) + 0.5) * rmax / bins
    filled = counts > 0
    values = np.zeros(bins)
    values[filled] = sums[filled] / counts[filled]
    if not filled.all():
        values = np.interp(centers, centers[filled], values[filled])
    return SpectralProfile(centers, values)


@dataclass(frozen=True)
class OtfEstimate:
    values: np.ndarray   # complex, (height, width), DC at [0, 0]
    regularization_eps: float

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def estimate_otf(degraded: RasterImage | np.ndarray, reference: RasterImage | np.ndarray,
                 eps: float | None = None, apodize: bool = True) -> OtfEstimate:
    """Regularized spectral division D conj(R) / (|R|^2 + eps).

    With ``eps=None`` the floor is ``1e-2 * mean(|R|^2)``.
    """
    d, r = _as_plane(degraded), _as_plane(reference)
    if d.shape != r.shape:
        raise ValueError(f"shape mismatch: {d.shape} vs {r.shape}")
    if apodize:
        win = apodization_window(*d.shape)
        d, r = d * win, r * win
    D, R = fft2(d), fft2(r)
    power = np.abs(R) ** 2
    if eps is None:
        eps = EPS_SCALE * float(power.mean())
        if eps == 0.0:
            eps = 1e-12
    if not eps > 0:
        raise ValueError("eps must be > 0")
    H = D * np.conj(R) / (power + eps)
    return OtfEstimate(H, float(eps))


def kernel_from_otf(otf: OtfEstimate, support: int) -> BlurKernel:
    """Centered crop of the inverse transform, negatives clipped, renormalized."""
    if support < 1 or support % 2 == 0:
        raise KernelError("support must be a positive odd integer")
    if support > min(otf.height, otf.width):
        raise KernelError("support exceeds OTF dimensions")
    if support == 1:
        return BlurKernel(np.ones((1, 1)))
    psf = np.fft.fftshift(np.real(np.fft.ifft2(otf.values)))
    cy, cx = otf.height // 2, otf.width // 2
    r = support // 2
    crop = np.clip(psf[cy - r:cy + r + 1, cx - r:cx + r + 1], 0.0, None)
    if crop.sum() <= 0:
        raise KernelError("estimated kernel has no positive mass")
    return BlurKernel(crop / crop.sum())


def kernel_ncc(a: BlurKernel | np.ndarray, b: BlurKernel | np.ndarray) -> float:
    """Zero-mean normalized cross-correlation of two centered kernels."""
    ta = a.taps if isinstance(a, BlurKernel) else np.asarray(a, dtype=np.float64)
    tb = b.taps if isinstance(b, BlurKernel) else np.asarray(b, dtype=np.float64)
    n = max(ta.shape[0], tb.shape[0])
    ta = np.pad(ta, (n - ta.shape[0]) // 2)
    tb = np.pad(tb, (n - tb.shape[0]) // 2)
    ta, tb = ta - ta.mean(), tb - tb.mean()
    denom = math.sqrt(float((ta * ta).sum() * (tb * tb).sum()))
    return float((ta * tb).sum() / denom) if denom > 0 else 0.0


def _profile_of(plane: np.ndarray, bins: int) -> np.ndarray:
    spec = np.fft.fftshift(np.log1p(np.abs(fft2(plane * apodization_window(*plane.shape)))))
    return radial_profile(spec, bins).log_magnitude


def fit_defocus_radius(degraded: RasterImage | np.ndarray, reference: RasterImage | np.ndarray,
                       radius_grid: Sequence[float], bins: int | None = None) -> tuple[float, float]:
    """Grid search for the disk radius whose blurred reference best matches the
    degraded radial log-spectrum. Ties go to the smaller radius."""
    grid = sorted(float(r) for r in radius_grid)
    if not grid:
        raise ValueError("radius grid is empty")
    d, ref = _as_plane(degraded), _as_plane(reference)
    if d.shape != ref.shape:
        raise ValueError(f"shape mismatch: {d.shape} vs {ref.shape}")
    if bins is None:
        bins = max(2, min(d.shape) // 4)
    target = _profile_of(d, bins)
    best_r, best_res = grid[0], math.inf
    for radius in grid:
        k = disk_kernel(radius)
        model = convolve_plane_fft(ref, k.taps) if k.size > 1 else ref
        res = float(np.sum((target - _profile_of(model, bins)) ** 2))
        if res < best_res:
            best_r, best_res = radius, res
    return best_r, best_res
