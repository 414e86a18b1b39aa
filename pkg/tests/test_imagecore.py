import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from eodeblur.imagecore import (RasterError, RasterImage, SensorSpec, TileGrid, TruncatedFileError,
                                UnsupportedFormatError, blend_weights, crop_tiles, downscale, extract_patches,
                                load_raster, luminance, plan_tiles, save_raster, stitch, to_uint8, upscale)


def test_raster_rejects_bad_shapes_and_nonfinite():
    with pytest.raises(RasterError):
        RasterImage(np.zeros((2, 4, 4)))
    with pytest.raises(RasterError):
        RasterImage(np.zeros((1, 0, 4)))
    with pytest.raises(RasterError):
        RasterImage(np.full((1, 2, 2), np.nan))


def test_raster_is_read_only_and_copies():
    src = np.zeros((1, 3, 3), np.float32)
    img = RasterImage(src)
    src[0, 0, 0] = 1
    assert img.data[0, 0, 0] == 0
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 1


def test_sensor_spec_defaults():
    s = SensorSpec()
    assert (s.width, s.height) == (2048, 1536)
    assert s.gsd_min < s.gsd_max
    with pytest.raises(ValueError):
        SensorSpec(gsd_min=41.0, gsd_max=37.5)


def test_p5_bytes_scale_to_unit_range(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 128, 255, 64]))
    img = load_raster(p)
    assert img.channels == 1
    np.testing.assert_allclose(img.data.ravel(), [0.0, 128 / 255, 1.0, 64 / 255], rtol=1e-7)


def test_png_round_trip_full_sensor_size(tmp_path):
    rng = np.random.default_rng(0)
    u8 = rng.integers(0, 256, (1536, 2048, 3), dtype=np.uint8)
    Image.fromarray(u8).save(tmp_path / "cap.png")
    img = load_raster(tmp_path / "cap.png")
    assert img.shape == (3, 1536, 2048)
    save_raster(img, tmp_path / "back.png")
    np.testing.assert_array_equal(np.asarray(Image.open(tmp_path / "back.png")), u8)


def test_ppm_write_and_read(tmp_path, rng):
    img = RasterImage(rng.integers(0, 256, (3, 5, 7)).astype(np.float32) / 255)
    save_raster(img, tmp_path / "x.ppm")
    assert (tmp_path / "x.ppm").read_bytes()[:2] == b"P6"
    np.testing.assert_allclose(load_raster(tmp_path / "x.ppm").data, img.data, atol=1e-7)


def test_load_errors(tmp_path):
    (tmp_path / "empty.png").write_bytes(b"")
    with pytest.raises(TruncatedFileError):
        load_raster(tmp_path / "empty.png")
    (tmp_path / "x.bmp").write_bytes(b"BM" + bytes(60))
    with pytest.raises(UnsupportedFormatError):
        load_raster(tmp_path / "x.bmp")
    (tmp_path / "cut.pgm").write_bytes(b"P5\n4 4\n255\n" + bytes(5))
    with pytest.raises(TruncatedFileError):
        load_raster(tmp_path / "cut.pgm")


def test_to_uint8_rounds_half_up_and_clamps():
    assert list(to_uint8(np.array([-0.1, 0.5 / 255, 1.5 / 255, 1.2]))) == [0, 1, 2, 255]


def test_luminance_weights():
    img = RasterImage(np.stack([np.ones((2, 2)), np.zeros((2, 2)), np.zeros((2, 2))]))
    np.testing.assert_allclose(luminance(img), 0.299)


def test_downscale_block_mean_and_dims():
    img = RasterImage(np.array([[[0.0, 1.0], [1.0, 0.0]]]))
    assert downscale(img, 2).data.item() == pytest.approx(0.5)
    big = RasterImage(np.zeros((1, 1024, 1024), np.float32))
    assert downscale(big, 4).shape == (1, 256, 256)
    with pytest.raises(RasterError):
        downscale(RasterImage(np.zeros((1, 6, 5))), 2)


@given(st.floats(0, 1), st.sampled_from([1, 2, 4, 8]))
def test_downscale_and_upscale_keep_constants(value, factor):
    img = RasterImage(np.full((3, 16, 16), value, np.float32))
    np.testing.assert_allclose(downscale(img, factor).data, np.float32(value), atol=1e-6)
    np.testing.assert_allclose(upscale(img, factor).data, np.float32(value), atol=1e-6)


def test_extract_patches_counts():
    assert len(extract_patches(RasterImage(np.zeros((1, 4, 4))), 2, 2)) == 4
    sensor = RasterImage.adopt(np.zeros((1, 1536, 2048), np.float32))
    assert len(extract_patches(sensor, 1024, 512)) == 6
    with pytest.raises(RasterError):
        extract_patches(RasterImage(np.zeros((1, 4, 4))), 5, 1)


def test_extract_patches_row_major(rng):
    img = RasterImage(rng.uniform(0, 1, (1, 6, 6)))
    patches = extract_patches(img, 3, 3)
    np.testing.assert_array_equal(patches[1].data, img.data[:, 0:3, 3:6])
    np.testing.assert_array_equal(patches[2].data, img.data[:, 3:6, 0:3])


def _check_grid(grid: TileGrid):
    cover = np.zeros((grid.height, grid.width), int)
    for x, y, w, h in grid.tiles:
        assert 0 < w <= grid.tile_size and 0 < h <= grid.tile_size
        cover[y:y + h, x:x + w] += 1
    assert cover.min() >= 1
    for starts, n in ((grid.xs, grid.width), (grid.ys, grid.height)):
        ends = [min(s + grid.tile_size, n) for s in starts]
        for i in range(len(starts) - 1):
            assert ends[i] - starts[i + 1] == grid.overlap
        assert ends[-1] == n


@given(st.integers(1, 300), st.integers(1, 300), st.integers(2, 96), st.data())
@settings(max_examples=60, deadline=None)
def test_plan_tiles_invariants(width, height, tile, data):
    overlap = data.draw(st.integers(0, tile - 1))
    grid = plan_tiles(width, height, tile, overlap)
    if width > tile and height > tile:
        _check_grid(grid)
    total = sum(blend_weights(grid, i).sum() for i in range(len(grid)))
    assert total == pytest.approx(width * height, rel=1e-9)


def test_plan_tiles_examples():
    grid = plan_tiles(2048, 1536, 256, 32)
    assert len(grid.xs) == 9 and len(grid.ys) == 7
    _check_grid(grid)
    with pytest.raises(RasterError):
        plan_tiles(64, 64, 32, 32)


def test_tilegrid_json_round_trip():
    grid = plan_tiles(300, 200, 64, 16)
    doc = json.loads(grid.to_json())
    assert doc["schema_version"] == 1
    assert TileGrid.from_json(grid.to_json()) == grid


@pytest.mark.parametrize("overlap", [0, 16, 64])
def test_stitch_round_trip(overlap, rng):
    img = RasterImage(rng.uniform(0, 1, (3, 300, 410)).astype(np.float32))
    grid = plan_tiles(img.width, img.height, 128, overlap)
    out = stitch(crop_tiles(img, grid), grid)
    assert np.max(np.abs(out.data - img.data)) <= 1e-6


def test_stitch_is_order_independent(rng):
    img = RasterImage(rng.uniform(0, 1, (1, 100, 100)).astype(np.float32))
    grid = plan_tiles(100, 100, 40, 10)
    weights = [blend_weights(grid, i) for i in range(len(grid))]
    sums = np.zeros((100, 100))
    for i in reversed(range(len(grid))):
        x, y, w, h = grid.tiles[i]
        sums[y:y + h, x:x + w] += weights[i]
    np.testing.assert_allclose(sums, 1.0, atol=1e-12)
