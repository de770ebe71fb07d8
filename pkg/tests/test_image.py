"""Image container, coordinate conventions, and file IO."""

import numpy as np
import pytest

from groupreg.image import ImageGrid, load_image, save_image


def gradient_image(size=64):
    v = np.linspace(0, 1, size)
    return ImageGrid(np.tile(v, (size, 1)))


class TestImageGrid:
    def test_minimum_size_enforced(self):
        with pytest.raises(ValueError):
            ImageGrid(np.zeros((32, 32)))

    def test_value_range_enforced(self):
        bad = np.zeros((64, 64))
        bad[0, 0] = 1.5
        with pytest.raises(ValueError):
            ImageGrid(bad)

    def test_non_finite_rejected(self):
        bad = np.zeros((64, 64))
        bad[1, 1] = np.nan
        with pytest.raises(ValueError):
            ImageGrid(bad)

    def test_center_origin_round_trip(self):
        img = gradient_image(65)
        # the exact center pixel maps to (0, 0) meters
        assert np.allclose(img.to_meters([32.0, 32.0]), [0.0, 0.0])
        assert np.allclose(img.to_pixel([0.0, 0.0]), [32.0, 32.0])

    def test_meters_per_px_scales_coordinates(self):
        img = ImageGrid(np.zeros((64, 64)), meters_per_px=2.0)
        c = (64 - 1) / 2.0
        assert np.allclose(img.to_meters([c + 1.0, c]), [2.0, 0.0])

    def test_extent(self):
        img = ImageGrid(np.zeros((64, 128)), meters_per_px=1.0)
        w, h = img.extent_m
        assert (w, h) == (128.0, 64.0)


class TestImageIO:
    @pytest.mark.parametrize("suffix", [".png", ".pgm"])
    def test_round_trip_8bit(self, tmp_path, suffix):
        img = gradient_image()
        path = tmp_path / f"img{suffix}"
        save_image(img, path)
        back = load_image(path)
        assert back.pixels.shape == img.pixels.shape
        assert np.abs(back.pixels - img.pixels).max() <= 1.0 / 255 + 1e-12

    def test_load_16bit_png(self, tmp_path):
        import cv2
        path = tmp_path / "img16.png"
        raw = (np.linspace(0, 65535, 64 * 64).reshape(64, 64)).astype(np.uint16)
        cv2.imwrite(str(path), raw)
        img = load_image(path)
        assert img.pixels.min() >= 0 and img.pixels.max() <= 1
        assert np.isclose(img.pixels.max(), 1.0, atol=1e-4)

    def test_missing_file(self, tmp_path):
        with pytest.raises((OSError, ValueError)):
            load_image(tmp_path / "nope.png")
