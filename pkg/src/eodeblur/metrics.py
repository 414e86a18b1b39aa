"""Image quality metrics: PSNR, SSIM, NIQE, BRISQUE scoring, and Sobel edge maps."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage, special

from .imagecore import RasterImage, downscale_plane, luminance

SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_WINDOW, SSIM_SIGMA = 11, 1.5

# MSCN stabilizer: C = 1 on a [0, 255] plane
MSCN_C = 1.0 / 255.0
MSCN_SIGMA = 7.0 / 6.0

NIQE_MAGIC = b"NIQE"
NIQE_VERSION = 1
N_FEATURES = 36


class MetricError(ValueError):
    pass


def _check_pair(a: RasterImage, b: RasterImage) -> None:
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")


def psnr(a: RasterImage, b: RasterImage) -> float:
    """Peak signal-to-noise ratio in dB over all channels, peak value 1."""
    _check_pair(a, b)
    mse = float(np.mean((a.data.astype(np.float64) - b.data.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gauss1d(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(plane: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    out = ndimage.correlate1d(plane, g, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, g, axis=1, mode="reflect")
    return out[r:-r, r:-r] if r else out


def ssim(a: RasterImage, b: RasterImage) -> float:
    """Mean SSIM on luminance, 11x11 Gaussian window (sigma 1.5), valid region."""
    _check_pair(a, b)
    if min(a.height, a.width) < SSIM_WINDOW:
        raise MetricError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    x, y = luminance(a), luminance(b)
    g = _gauss1d(SSIM_WINDOW, SSIM_SIGMA)
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


# -- natural scene statistics ---------------------------------------------------

def mscn(plane: np.ndarray, return_sigma: bool = False):
    """Mean-subtracted contrast-normalized coefficients (7x7 Gaussian, sigma 7/6)."""
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2 or min(plane.shape) < 7:
        raise MetricError("MSCN needs a 2-D plane of at least 7x7")
    g = _gauss1d(7, MSCN_SIGMA)

    def blur(z):
        return ndimage.correlate1d(ndimage.correlate1d(z, g, axis=0, mode="reflect"),
                                   g, axis=1, mode="reflect")

    mu = blur(plane)
    sigma = np.sqrt(np.abs(blur(plane * plane) - mu * mu))
    out = (plane - mu) / (sigma + MSCN_C)
    return (out, sigma) if return_sigma else out


_ALPHA_GRID = np.arange(0.2, 10.0 + 1e-9, 0.001)
_RHO_GRID = special.gamma(2 / _ALPHA_GRID) ** 2 / (special.gamma(1 / _ALPHA_GRID) * special.gamma(3 / _ALPHA_GRID))


def aggd_fit(samples: np.ndarray) -> tuple[float, float, float]:
    """Moment-matching fit of an asymmetric generalized Gaussian.

    Returns (alpha, sigma_left, sigma_right).
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 100:
        raise MetricError("AGGD fit needs at least 100 samples")
    if not np.any(x):
        raise MetricError("AGGD fit on all-zero samples")
    left, right = x[x < 0], x[x > 0]
    sl = math.sqrt(float(np.mean(left * left))) if left.size else 0.0
    sr = math.sqrt(float(np.mean(right * right))) if right.size else 0.0
    gamma_hat = sl / sr if sr > 0 else math.inf
    r_hat = float(np.mean(np.abs(x))) ** 2 / float(np.mean(x * x))
    if math.isinf(gamma_hat) or gamma_hat == 0:
        big_r = r_hat
    else:
        big_r = r_hat * (gamma_hat ** 3 + 1) * (gamma_hat + 1) / (gamma_hat ** 2 + 1) ** 2
    alpha = float(_ALPHA_GRID[np.argmin((_RHO_GRID - big_r) ** 2)])
    return alpha, sl, sr


def _aggd_features(x: np.ndarray) -> list[float]:
    alpha, sl, sr = aggd_fit(x)
    g1, g2, g3 = special.gamma(1 / alpha), special.gamma(2 / alpha), special.gamma(3 / alpha)
    ratio = math.sqrt(g1 / g3)
    eta = (sr - sl) * ratio * g2 / g1
    return [alpha, eta, sl * sl, sr * sr]


def _pair_products(m: np.ndarray) -> list[np.ndarray]:
    """Neighbour products in the order H, V, D1 (down-right), D2 (down-left)."""
    return [
        m[:, :-1] * m[:, 1:],
        m[:-1, :] * m[1:, :],
        m[:-1, :-1] * m[1:, 1:],
        m[:-1, 1:] * m[1:, :-1],
    ]


def scale_features(m: np.ndarray) -> list[float]:
    """18 features from one MSCN plane.

    [alpha, mean variance] of the MSCN coefficients, then for each neighbour
    product H, V, D1, D2: [alpha, eta, sigma_left^2, sigma_right^2].
    """
    alpha, sl, sr = aggd_fit(m)
    feats = [alpha, 0.5 * (sl * sl + sr * sr)]
    for prod in _pair_products(m):
        feats.extend(_aggd_features(prod))
    return feats


def _half(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return downscale_plane(plane[:h - h % 2, :w - w % 2], 2)


def nss_features(img: RasterImage | np.ndarray) -> np.ndarray:
    """36 natural-scene-statistics features: 18 at full and 18 at half resolution."""
    plane = luminance(img) if isinstance(img, RasterImage) else np.asarray(img, dtype=np.float64)
    if min(plane.shape) < 64:
        raise MetricError("NSS features need an image of at least 64x64")
    full = scale_features(mscn(plane))
    half = scale_features(mscn(_half(plane)))
    return np.asarray(full + half)


# -- NIQE -----------------------------------------------------------------------

@dataclass(frozen=True)
class NiqeModel:
    feature_mean: np.ndarray
    feature_covariance: np.ndarray
    patch_size: int = 96
    sharpness_percentile: float = 75.0

    def save(self, path: str | Path) -> Path:
        """Binary layout (little-endian): magic 'NIQE', u16 version, u16 n,
        u32 patch_size, f64 sharpness_percentile, n f64 mean, n*n f64 covariance."""
        n = len(self.feature_mean)
        blob = (NIQE_MAGIC + struct.pack("<HHId", NIQE_VERSION, n, self.patch_size, self.sharpness_percentile)
                + np.asarray(self.feature_mean, dtype="<f8").tobytes()
                + np.asarray(self.feature_covariance, dtype="<f8").tobytes())
        Path(path).write_bytes(blob)
        return Path(path)

    @classmethod
    def load(cls, path: str | Path) -> "NiqeModel":
        blob = Path(path).read_bytes()
        head = 4 + struct.calcsize("<HHId")
        if len(blob) < head or blob[:4] != NIQE_MAGIC:
            raise MetricError(f"{path}: not a NIQE model file")
        version, n, patch, pct = struct.unpack("<HHId", blob[4:head])
        if version != NIQE_VERSION:
            raise MetricError(f"{path}: unsupported NIQE model version {version}")
        if len(blob) != head + 8 * (n + n * n):
            raise MetricError(f"{path}: truncated NIQE model")
        mean = np.frombuffer(blob, "<f8", n, head).astype(np.float64)
        cov = np.frombuffer(blob, "<f8", n * n, head + 8 * n).reshape(n, n).astype(np.float64)
        return cls(mean, cov, patch, pct)


def niqe_patch_features(img: RasterImage | np.ndarray, patch_size: int = 96) -> tuple[np.ndarray, np.ndarray]:
    """Per-patch 36-vectors over non-overlapping patches, plus each patch's sharpness.

    MSCN is computed once over the whole image at each scale; half-scale
    patches are patch_size/2 wide and aligned with the full-scale ones.
    Sharpness is the mean local standard deviation inside the patch.
    """
    plane = luminance(img) if isinstance(img, RasterImage) else np.asarray(img, dtype=np.float64)
    ph = patch_size // 2
    ny, nx = plane.shape[0] // patch_size, plane.shape[1] // patch_size
    if ny * nx == 0:
        raise MetricError(f"image smaller than one {patch_size}px patch")
    plane = plane[:ny * patch_size, :nx * patch_size]
    m_full, sigma = mscn(plane, return_sigma=True)
    m_half = mscn(_half(plane))
    feats, sharp = [], []
    for j in range(ny):
        for i in range(nx):
            sl = np.s_[j * patch_size:(j + 1) * patch_size, i * patch_size:(i + 1) * patch_size]
            sh = np.s_[j * ph:(j + 1) * ph, i * ph:(i + 1) * ph]
            feats.append(scale_features(m_full[sl]) + scale_features(m_half[sh]))
            sharp.append(float(sigma[sl].mean()))
    return np.asarray(feats), np.asarray(sharp)


def niqe_fit(corpus: Sequence[RasterImage], patch_size: int = 96,
             sharpness_percentile: float = 75.0, min_patches: int = 200) -> NiqeModel:
    """Fit the pristine feature Gaussian over the sharpest patches of a corpus.

    Keeps the `sharpness_percentile` percent of patches with the highest
    sharpness (ties resolved by corpus order).
    """
    feats, sharp = [], []
    for img in corpus:
        f, s = niqe_patch_features(img, patch_size)
        feats.append(f)
        sharp.append(s)
    if not feats:
        raise MetricError("empty corpus")
    feats_a, sharp_a = np.concatenate(feats), np.concatenate(sharp)
    keep = int(math.ceil(len(sharp_a) * sharpness_percentile / 100.0))
    order = np.argsort(-sharp_a, kind="stable")[:keep]
    if keep < min_patches:
        raise MetricError(f"corpus yields {keep} selected patches, need {min_patches}")
    sel = feats_a[np.sort(order)]
    mean = sel.mean(axis=0)
    cov = np.cov(sel, rowvar=False)
    cov = 0.5 * (cov + cov.T)
    return NiqeModel(mean, cov, patch_size, sharpness_percentile)


def niqe_distance(mu1: np.ndarray, cov1: np.ndarray, mu2: np.ndarray, cov2: np.ndarray) -> float:
    diff = mu1 - mu2
    pinv = np.linalg.pinv((cov1 + cov2) / 2.0, hermitian=True)
    return float(math.sqrt(max(float(diff @ pinv @ diff), 0.0)))


def niqe_score(img: RasterImage | np.ndarray, model: NiqeModel) -> float:
    """Distance between the model Gaussian and the image's patch-feature Gaussian."""
    feats, _ = niqe_patch_features(img, model.patch_size)
    if len(feats) < 4:
        raise MetricError("NIQE needs an image holding at least 4 patches")
    cov = np.cov(feats, rowvar=False)
    return niqe_distance(model.feature_mean, model.feature_covariance, feats.mean(axis=0), cov)


# -- BRISQUE --------------------------------------------------------------------

@dataclass(frozen=True)
class BrisqueModel:
    """RBF support-vector regressor over range-scaled NSS features.

    JSON file layout::

        {"schema_version": 1,
         "feature_min": [36 floats], "feature_max": [36 floats],
         "scale_lower": -1.0, "scale_upper": 1.0,
         "gamma": float, "bias": float,
         "support_vectors": [[36 floats], ...],
         "dual_coefficients": [float, ...]}

    Features are scaled per dimension to [scale_lower, scale_upper] and
    scored as ``sum_i coef_i * exp(-gamma * |s - sv_i|^2) + bias``.
    """

    feature_min: np.ndarray
    feature_max: np.ndarray
    gamma: float
    bias: float
    support_vectors: np.ndarray
    dual_coefficients: np.ndarray
    scale_lower: float = -1.0
    scale_upper: float = 1.0

    @classmethod
    def load(cls, path: str | Path) -> "BrisqueModel":
        try:
            doc = json.loads(Path(path).read_text())
            fmin = np.asarray(doc["feature_min"], dtype=np.float64)
            fmax = np.asarray(doc["feature_max"], dtype=np.float64)
            sv = np.asarray(doc["support_vectors"], dtype=np.float64).reshape(-1, N_FEATURES)
            coef = np.asarray(doc["dual_coefficients"], dtype=np.float64)
            model = cls(fmin, fmax, float(doc["gamma"]), float(doc["bias"]), sv, coef,
                        float(doc.get("scale_lower", -1.0)), float(doc.get("scale_upper", 1.0)))
        except FileNotFoundError:
            raise
        except (ValueError, KeyError, TypeError) as exc:
            raise MetricError(f"{path}: invalid BRISQUE model: {exc}") from exc
        if fmin.shape != (N_FEATURES,) or fmax.shape != (N_FEATURES,) or len(coef) != len(sv):
            raise MetricError(f"{path}: inconsistent BRISQUE model dimensions")
        return model

    def save(self, path: str | Path) -> Path:
        Path(path).write_text(json.dumps({
            "schema_version": 1,
            "feature_min": self.feature_min.tolist(),
            "feature_max": self.feature_max.tolist(),
            "scale_lower": self.scale_lower,
            "scale_upper": self.scale_upper,
            "gamma": self.gamma,
            "bias": self.bias,
            "support_vectors": self.support_vectors.tolist(),
            "dual_coefficients": self.dual_coefficients.tolist(),
        }))
        return Path(path)

    def scale(self, feats: np.ndarray) -> np.ndarray:
        span = np.where(self.feature_max > self.feature_min, self.feature_max - self.feature_min, 1.0)
        t = (feats - self.feature_min) / span
        return self.scale_lower + (self.scale_upper - self.scale_lower) * t

    def predict(self, feats: np.ndarray) -> float:
        if len(self.dual_coefficients) == 0:
            return self.bias
        s = self.scale(np.asarray(feats, dtype=np.float64))
        d2 = np.sum((self.support_vectors - s) ** 2, axis=1)
        return float(self.dual_coefficients @ np.exp(-self.gamma * d2) + self.bias)


def brisque_score(img: RasterImage, model_file: str | Path | BrisqueModel) -> float:
    model = model_file if isinstance(model_file, BrisqueModel) else BrisqueModel.load(model_file)
    return model.predict(nss_features(img))


# -- edges and reports -------------------------------------------------------------

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def sobel_magnitude(img: RasterImage | np.ndarray) -> np.ndarray:
    plane = luminance(img) if isinstance(img, RasterImage) else np.asarray(img, dtype=np.float64)
    gx = ndimage.correlate(plane, SOBEL_X, mode="reflect")
    gy = ndimage.correlate(plane, SOBEL_X.T, mode="reflect")
    return np.hypot(gx, gy)


def sobel_edges(img: RasterImage | np.ndarray, threshold: float) -> np.ndarray:
    """Boolean edge map: Sobel gradient magnitude of luminance above `threshold`."""
    if threshold < 0:
        raise MetricError("threshold must be >= 0")
    return sobel_magnitude(img) > threshold


@dataclass
class QualityReport:
    ssim: float | None = None
    psnr_db: float | None = None
    niqe: float | None = None
    brisque: float | None = None

    def __post_init__(self):
        if all(v is None for v in (self.ssim, self.psnr_db, self.niqe, self.brisque)):
            raise MetricError("QualityReport needs at least one metric")

    def to_dict(self) -> dict:
        out: dict = {"schema_version": 1}
        for key, value in asdict(self).items():
            if value is None:
                continue
            out[key] = "inf" if (isinstance(value, float) and math.isinf(value)) else value
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "QualityReport":
        vals = {}
        for key in ("ssim", "psnr_db", "niqe", "brisque"):
            if key in doc:
                v = doc[key]
                vals[key] = math.inf if v == "inf" else float(v)
        return cls(**vals)


def assess(img: RasterImage, reference: RasterImage | None = None, niqe_model: NiqeModel | None = None,
           brisque_model: BrisqueModel | str | Path | None = None) -> QualityReport:
    """Collect whichever metrics the supplied inputs allow."""
    report = {}
    if reference is not None:
        report["ssim"] = ssim(img, reference)
        report["psnr_db"] = psnr(img, reference)
    if niqe_model is not None:
        report["niqe"] = niqe_score(img, niqe_model)
    if brisque_model is not None:
        report["brisque"] = brisque_score(img, brisque_model)
    return QualityReport(**report)
