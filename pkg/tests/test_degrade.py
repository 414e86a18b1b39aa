import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eodeblur.degrade import (
    BlurKernel, DegradeSpec, KernelError, SpecError, apply, convolve, disk_kernel,
    gaussian_kernel, gaussian_profile, identity_kernel, motion_kernel, rescale_kernel,
    rescaled_radius, sample_spec, shot_noise, spin_blur, splitmix64, sub_seed,
)
from eodeblur.imagecore import RasterImage

from conftest import random_raster


def test_disk_radius_zero_is_identity():
    assert disk_kernel(0).taps.tolist() == [[1.0]]


def test_disk_r2_lattice_points():
    k = disk_kernel(2, supersample=1)
    assert k.size == 5
    nz = k.taps[k.taps > 0]
    assert nz.size == 13
    np.testing.assert_allclose(nz, 1 / 13)


@given(st.floats(0.0, 9.0), st.integers(1, 6))
@settings(max_examples=30, deadline=None)
def test_disk_normalized(radius, ss):
    k = disk_kernel(radius, ss)
    assert abs(k.taps.sum() - 1) <= 1e-6
    assert k.size % 2 == 1 and np.all(k.taps >= 0)


def test_kernel_validation():
    with pytest.raises(KernelError):
        disk_kernel(-1)
    with pytest.raises(KernelError):
        gaussian_kernel(0)
    with pytest.raises(KernelError):
        motion_kernel(0.5, 0)
    with pytest.raises(KernelError):
        BlurKernel(np.ones((2, 2)) / 4)
    with pytest.raises(KernelError):
        BlurKernel(np.ones((3, 3)))


def test_gaussian_closed_form():
    prof = gaussian_profile(1.0)
    raw = np.outer(prof, prof)
    c = len(prof) // 2
    assert raw[c, c] / raw[c, 0] == pytest.approx(math.exp(4.5), rel=1e-9)
    k = gaussian_kernel(1.0)
    p = k.taps[c] / k.taps[c].sum()
    np.testing.assert_allclose(k.taps, np.outer(p, p), atol=1e-9)


def test_gaussian_small_sigma_symmetric():
    t = gaussian_kernel(0.5).taps
    assert t.argmax() == t.size // 2
    np.testing.assert_allclose(t, t.T)
    np.testing.assert_allclose(t, t[::-1])


def test_motion_kernels():
    assert motion_kernel(1, 37).taps.tolist() == [[1.0]]
    k = motion_kernel(5, 0)
    c = k.radius
    np.testing.assert_allclose(k.taps[c, c - 2:c + 3], 0.2, atol=1e-9)
    assert k.taps.sum() - k.taps[c].sum() == pytest.approx(0, abs=1e-9)
    np.testing.assert_allclose(motion_kernel(5, 90).taps, k.taps.T, atol=1e-12)


def test_kernel_json_roundtrip():
    k = disk_kernel(3.3)
    np.testing.assert_allclose(BlurKernel.from_json(k.to_json()).taps, k.taps, atol=1e-15)


def test_convolve_identity_and_constant(rng):
    img = random_raster(rng, 20, 24)
    assert np.array_equal(convolve(img, identity_kernel()).data, img.data)
    const = RasterImage(np.full((1, 16, 16), 0.3, np.float32))
    np.testing.assert_allclose(convolve(const, disk_kernel(3)).data, 0.3, atol=1e-6)


def test_fft_matches_spatial(rng):
    img = random_raster(rng, 32, 32)
    k = disk_kernel(3)
    a = convolve(img, k, path="spatial").data
    b = convolve(img, k, path="fft").data
    assert np.abs(a - b).max() <= 1e-5


def test_convolve_kernel_too_big():
    img = RasterImage(np.zeros((1, 8, 8), np.float32))
    with pytest.raises(KernelError):
        convolve(img, disk_kernel(6))


def test_spin_single_sample_is_identity(rng):
    img = random_raster(rng, 24, 24)
    out = spin_blur(img, extent=1e-9, samples=1)
    np.testing.assert_allclose(out.data, img.data, atol=1e-6)


def test_spin_radial_image_unchanged():
    yy, xx = np.mgrid[0:64, 0:64]
    r = np.hypot(xx - 31.5, yy - 31.5)
    img = RasterImage(np.exp(-(r / 20.0) ** 2)[None].astype(np.float32))
    out = spin_blur(img, (31.5, 31.5), extent=2.0, samples=16)
    assert np.abs(out.data - img.data).max() <= 1e-3


def test_shot_noise_properties():
    img = RasterImage(np.full((1, 256, 256), 0.5, np.float32))
    a = shot_noise(img, 1000, seed=3)
    assert np.array_equal(a.data, shot_noise(img, 1000, seed=3).data)
    tol = 3 * math.sqrt(0.5 * 1000) / 1000 / 256
    assert abs(a.data.mean() - 0.5) <= tol
    near = shot_noise(img, 1e9, seed=3)
    assert np.abs(near.data - img.data).max() <= 1e-3


def test_splitmix_reference_value():
    # first output of the reference SplitMix64 generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    assert sub_seed(7, 0) != sub_seed(7, 1)


def test_apply_single_defocus(scene128):
    spec = DegradeSpec(({"kind": "defocus", "radius": 4},))
    np.testing.assert_array_equal(apply(spec, scene128).data, convolve(scene128, disk_kernel(4)).data)


def test_apply_deterministic(scene128):
    spec = DegradeSpec(({"kind": "defocus", "radius": 4}, {"kind": "shot", "photons": 2000}), seed=7)
    assert np.array_equal(apply(spec, scene128).data, apply(spec, scene128).data)


def test_step_order_matters():
    edge = np.zeros((1, 32, 32), np.float32)
    edge[:, :, 16:] = 1.0
    img = RasterImage(edge)
    blur = {"kind": "defocus", "radius": 3}
    noise = {"kind": "shot", "photons": 500}
    a = apply(DegradeSpec((blur, noise), seed=1), img).data
    b = apply(DegradeSpec((noise, blur), seed=1), img).data
    assert np.linalg.norm(a - b) > 0


def test_spec_validation_and_load(tmp_path):
    with pytest.raises(SpecError):
        DegradeSpec(())
    with pytest.raises(SpecError):
        DegradeSpec(({"kind": "defocus"},))
    with pytest.raises(SpecError):
        DegradeSpec(({"kind": "gaussian", "sigma": -1},))
    with pytest.raises(SpecError):
        DegradeSpec.from_json("{not json")
    spec = sample_spec(5, ("gaussian", "motion", "spin", "shot"))
    path = tmp_path / "spec.json"
    path.write_text(spec.to_json())
    assert DegradeSpec.load(path) == spec
    assert DegradeSpec.load(spec.to_json()) == spec


def test_rescale_kernel():
    assert rescaled_radius(4, 4) == 1
    k = rescale_kernel(disk_kernel(4), 4)
    assert k.size == 3
    np.testing.assert_allclose(k.taps, k.taps.T, atol=1e-12)
    assert rescale_kernel(k, 1) is k
