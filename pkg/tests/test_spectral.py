import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from eodeblur.degrade import KernelError, convolve, disk_kernel
from eodeblur.imagecore import RasterImage
from eodeblur.spectral import (
    OtfEstimate, estimate_otf, fft2, fit_defocus_radius, kernel_from_otf, kernel_ncc,
    log_spectrum, radial_frequency_map, radial_profile,
)


def _direct_dft(x):
    n, m = x.shape
    fy = np.exp(-2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n)
    fx = np.exp(-2j * np.pi * np.outer(np.arange(m), np.arange(m)) / m)
    return fy @ x @ fx.T


def test_fft_constant_and_impulse():
    X = fft2(np.full((8, 8), 0.25))
    assert X[0, 0] == pytest.approx(0.25 * 64)
    X[0, 0] = 0
    assert np.abs(X).max() <= 1e-9
    imp = np.zeros((6, 6))
    imp[0, 0] = 1
    np.testing.assert_allclose(fft2(imp), 1.0, atol=1e-12)


@given(st.integers(0, 2**31))
@settings(max_examples=10, deadline=None)
def test_fft_against_direct_dft_and_parseval(seed):
    x = np.random.default_rng(seed).normal(size=(8, 8))
    X = fft2(x)
    np.testing.assert_allclose(X, _direct_dft(x), atol=1e-9)
    assert np.sum(x * x) == pytest.approx(np.sum(np.abs(X) ** 2) / 64, abs=1e-9)


def test_log_spectrum_constant():
    s = log_spectrum(np.full((16, 16), 0.5))
    assert s[8, 8] == pytest.approx(np.log1p(0.5 * 256))
    s[8, 8] = 0
    assert np.abs(s).max() <= 1e-9


def test_log_spectrum_point_symmetry():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(16, 16))
    s = log_spectrum(x)
    # the shifted spectrum of a real plane satisfies S[k] == S[-k] around index 8
    inner = s[1:, 1:]
    np.testing.assert_allclose(inner, inner[::-1, ::-1], atol=1e-9)


def test_disk_blur_dark_ring_at_otf_zero():
    rng = np.random.default_rng(3)
    noise = RasterImage(rng.uniform(0, 1, (1, 256, 256)).astype(np.float32))
    blurred = convolve(noise, disk_kernel(4, supersample=16))
    prof = radial_profile(log_spectrum(blurred), 64)
    f0 = special.jn_zeros(1, 1)[0] / (2 * np.pi * 4)
    band = (prof.radial_frequency > 0.08) & (prof.radial_frequency < 0.25)
    f_min = prof.radial_frequency[band][np.argmin(prof.log_magnitude[band])]
    assert abs(f_min - f0) <= 0.015


def test_radial_profile_constant_and_ring():
    p = radial_profile(np.full((32, 32), 2.5), 8)
    np.testing.assert_allclose(p.log_magnitude, 2.5)
    r = radial_frequency_map(64, 64)
    bins = 16
    idx = np.minimum((r / (0.5 * np.sqrt(2)) * bins).astype(int), bins - 1)
    ring = np.where(idx == 5, 1.0, 0.0)
    p = radial_profile(ring, bins)
    assert np.argmax(p.log_magnitude) == 5
    assert np.count_nonzero(p.log_magnitude > 1e-12) == 1
    doc = json.loads(p.to_json())
    assert doc["bins"] == bins and len(doc["log_magnitude"]) == bins


def test_blurred_profile_below_sharp(scene128):
    blurred = convolve(scene128, disk_kernel(3))
    a = radial_profile(log_spectrum(scene128, apodize=True), 30).log_magnitude
    b = radial_profile(log_spectrum(blurred, apodize=True), 30).log_magnitude
    assert np.all(b[20:] <= a[20:])


def test_otf_identity_pair(scene128):
    H = estimate_otf(scene128, scene128, eps=1e-9).values
    assert H.shape == (128, 128)
    np.testing.assert_allclose(np.abs(H[:4, :4]), 1.0, atol=1e-6)


def test_otf_zero_reference():
    z = np.zeros((16, 16))
    assert np.all(estimate_otf(np.ones((16, 16)), z, eps=1e-3).values == 0)


def test_otf_errors():
    with pytest.raises(ValueError):
        estimate_otf(np.zeros((8, 8)), np.zeros((8, 9)))
    with pytest.raises(ValueError):
        estimate_otf(np.ones((8, 8)), np.ones((8, 8)), eps=0.0)


def test_kernel_recovered_from_pair(scene128):
    true = disk_kernel(4)
    blurred = convolve(scene128, true)
    est = estimate_otf(blurred, scene128)
    assert kernel_ncc(kernel_from_otf(est, 15), true) >= 0.95


def test_kernel_from_exact_otf():
    true = disk_kernel(3)
    otf = OtfEstimate(np.fft.fft2(np.fft.ifftshift(np.pad(true.taps, 25))), 0.0)
    k = kernel_from_otf(otf, 7)
    assert np.abs(k.taps - true.taps).sum() <= 0.05


def test_kernel_from_otf_trivial():
    ones = OtfEstimate(np.ones((32, 32), complex), 0.0)
    k = kernel_from_otf(ones, 9)
    assert k.taps[4, 4] == pytest.approx(1.0)
    assert kernel_from_otf(ones, 1).taps.tolist() == [[1.0]]
    with pytest.raises(KernelError):
        kernel_from_otf(ones, 4)


def test_kernel_ncc_bounds():
    a = disk_kernel(3)
    assert kernel_ncc(a, a) == pytest.approx(1.0)
    assert -1.0 <= kernel_ncc(a, disk_kernel(1)) <= 1.0


def test_fit_defocus_radius(scene128):
    blurred = convolve(scene128, disk_kernel(4))
    r, residual = fit_defocus_radius(blurred, scene128, [2, 3, 4, 5, 6])
    assert r == 4 and residual >= 0
    assert fit_defocus_radius(scene128, scene128, [0, 1, 2])[0] == 0
    assert fit_defocus_radius(blurred, scene128, [2.5])[0] == 2.5
    with pytest.raises(ValueError):
        fit_defocus_radius(blurred, scene128, [])
