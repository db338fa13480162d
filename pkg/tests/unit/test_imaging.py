"""Tests for imaging module."""

import math

import numpy as np
import pytest
from PIL import Image

from src.base import EnhanceConfig, ScanImage
from src.exceptions import InvalidInputError
from src.imaging import (
    diffuse,
    directional_gradient,
    enhance_contrast,
    load_scan,
    make_grid,
    orientation_set,
    preprocess,
    save_scan,
    sobel_gradients,
)


class TestScanIO:
    """Tests for load_scan and save_scan."""

    def test_eight_bit_round_trip(self, tmp_path, rng):
        """An 8-bit scan survives save and load unchanged."""
        img = ScanImage(rng.integers(0, 256, size=(20, 30)).astype(float))
        loaded = load_scan(save_scan(img, tmp_path / "scan.png"))
        assert loaded.max_level == 256
        np.testing.assert_array_equal(loaded.pixels, img.pixels)

    def test_sixteen_bit_keeps_levels(self, tmp_path):
        """16-bit PNGs load with 65536 levels."""
        pixels = np.linspace(0, 60000, 64).reshape(8, 8).round()
        img = ScanImage(pixels, max_level=65536)
        loaded = load_scan(save_scan(img, tmp_path / "deep.png"))
        assert loaded.max_level == 65536
        np.testing.assert_array_equal(loaded.pixels, pixels)

    def test_color_reduced_to_luminance(self, tmp_path):
        """RGB inputs use 0.299R + 0.587G + 0.114B, rounded."""
        path = tmp_path / "red.png"
        Image.new("RGB", (4, 3), (255, 0, 0)).save(path)
        loaded = load_scan(path)
        assert loaded.shape == (3, 4)
        assert np.all(loaded.pixels == 76)

    def test_unreadable_file(self, tmp_path):
        """Garbage bytes raise InvalidInputError."""
        path = tmp_path / "broken.png"
        path.write_bytes(b"not an image")
        with pytest.raises(InvalidInputError):
            load_scan(path)

    def test_missing_file(self, tmp_path):
        """A missing path raises InvalidInputError."""
        with pytest.raises(InvalidInputError):
            load_scan(tmp_path / "nope.png")


class TestScanImage:
    """Tests for ScanImage validation."""

    def test_rejects_out_of_range(self):
        """Pixels above L_M - 1 are rejected."""
        with pytest.raises(InvalidInputError):
            ScanImage(np.full((2, 2), 256.0))

    def test_rejects_empty(self):
        """Empty rasters are rejected."""
        with pytest.raises(InvalidInputError):
            ScanImage(np.zeros((0, 4)))

    def test_pixels_are_read_only(self):
        """Stored pixels cannot be modified in place."""
        img = ScanImage(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            img.pixels[0, 0] = 1.0


class TestMakeGrid:
    """Tests for make_grid."""

    def test_remainder_goes_to_last_patch(self):
        """A 10-row scan in 3 strips ends with a 4-row strip."""
        grid = make_grid(ScanImage(np.zeros((10, 10))), 3, 3)
        assert grid.row_edges == (0, 3, 6, 10)
        assert grid.col_edges == (0, 3, 6, 10)
        assert len(grid.patches()) == 9

    def test_grid_finer_than_scan(self):
        """More patches than pixels is rejected."""
        with pytest.raises(InvalidInputError):
            make_grid(ScanImage(np.zeros((4, 4))), 5, 2)

    def test_zero_grid(self):
        """A 0-row grid is rejected."""
        with pytest.raises(InvalidInputError):
            make_grid(ScanImage(np.zeros((4, 4))), 0, 2)


class TestEnhanceContrast:
    """Tests for enhance_contrast."""

    def test_constant_patch_unchanged(self, flat_scan):
        """A single-level patch keeps its level."""
        out = enhance_contrast(flat_scan, make_grid(flat_scan, 2, 2))
        np.testing.assert_array_equal(out.pixels, flat_scan.pixels)

    def test_two_levels_stretch_to_full_range(self):
        """Half 0, half 100 maps to 0 and 255."""
        pixels = np.zeros((10, 10))
        pixels[:, 5:] = 100
        img = ScanImage(pixels)
        out = enhance_contrast(img, make_grid(img, 1, 1))
        assert set(np.unique(out.pixels)) == {0.0, 255.0}
        assert np.all(out.pixels[:, 5:] == 255)

    def test_uniform_patch_is_fixed_point(self):
        """Levels 0..3 once each at L_M=4 map onto themselves."""
        img = ScanImage(np.array([[0.0, 1.0], [2.0, 3.0]]), max_level=4)
        out = enhance_contrast(img, make_grid(img, 1, 1))
        np.testing.assert_array_equal(out.pixels, img.pixels)

    def test_idempotent_on_uniform_patches(self, rng):
        """Patches whose occupied levels are equally frequent come back unchanged on a second pass."""
        pixels = np.empty((16, 16))
        for rows in (slice(0, 8), slice(8, 16)):
            for cols in (slice(0, 8), slice(8, 16)):
                levels = rng.choice(256, size=8, replace=False)
                pixels[rows, cols] = rng.permutation(np.repeat(levels, 8)).reshape(8, 8)
        img = ScanImage(pixels)
        grid = make_grid(img, 2, 2)
        once = enhance_contrast(img, grid)
        twice = enhance_contrast(once, grid)
        np.testing.assert_array_equal(twice.pixels, once.pixels)

    def test_output_range(self, rng):
        """Output stays in [0, L_M - 1] and keeps shape."""
        img = ScanImage(rng.integers(0, 256, size=(37, 41)).astype(float))
        out = enhance_contrast(img, make_grid(img, 4, 5))
        assert out.shape == img.shape
        assert out.pixels.min() >= 0
        assert out.pixels.max() <= 255

    def test_monotone_within_patch(self, rng):
        """Equalization never swaps the order of two levels inside one patch."""
        img = ScanImage(rng.integers(0, 256, size=(16, 16)).astype(float))
        out = enhance_contrast(img, make_grid(img, 1, 1))
        order = np.argsort(img.pixels.ravel(), kind="stable")
        assert np.all(np.diff(out.pixels.ravel()[order]) >= 0)

    def test_whole_image_denominator_matches_for_single_patch(self, rng):
        """With one patch P equals M*N, so both denominators agree."""
        img = ScanImage(rng.integers(0, 256, size=(12, 12)).astype(float))
        grid = make_grid(img, 1, 1)
        np.testing.assert_array_equal(
            enhance_contrast(img, grid).pixels,
            enhance_contrast(img, grid, whole_image_denominator=True).pixels,
        )

    def test_clip_limit_flattens_mapping(self):
        """Clipping the histogram pulls the upper level below full white."""
        pixels = np.zeros((10, 10))
        pixels[:, 5:] = 100
        img = ScanImage(pixels)
        out = enhance_contrast(img, make_grid(img, 1, 1), clip_limit=2.56)
        high = out.pixels[0, 9]
        assert out.pixels[0, 0] < high < 255

    def test_preprocess_disabled_is_identity(self, flat_scan):
        """Disabled enhancement returns the scan untouched."""
        assert preprocess(flat_scan, EnhanceConfig(enabled=False)) is flat_scan

    def test_preprocess_small_scan_caps_grid(self):
        """An 8x8 default grid on a 4x4 scan is reduced to fit."""
        img = ScanImage(np.arange(16, dtype=float).reshape(4, 4))
        out = preprocess(img, EnhanceConfig())
        assert out.shape == (4, 4)


class TestGradients:
    """Tests for orientation_set and directional_gradient."""

    def test_two_orientations(self):
        """K=2 gives 0 and pi."""
        assert orientation_set(2) == [0.0, math.pi]

    def test_orientations_ascending(self):
        """Orientations are 2*pi*k/K in ascending order."""
        thetas = orientation_set(6)
        assert len(thetas) == 6
        assert thetas == sorted(thetas)
        assert thetas[1] == pytest.approx(math.pi / 3)

    def test_zero_orientations(self):
        """K=0 is rejected."""
        with pytest.raises(InvalidInputError):
            orientation_set(0)

    def test_step_edge_strength(self, step_scan):
        """A 120-level vertical step reads 60 gray levels per pixel on both sides of the edge."""
        field = directional_gradient(step_scan, 0.0)
        assert field.values[10, 31] == pytest.approx(60.0)
        assert field.values[10, 32] == pytest.approx(60.0)
        assert field.values[10, 5] == 0.0

    def test_opposite_orientation_negates(self, step_scan):
        """theta and theta + pi give exact negations."""
        forward = directional_gradient(step_scan, 0.0).values
        backward = directional_gradient(step_scan, math.pi).values
        np.testing.assert_array_equal(forward, -backward)

    def test_orthogonal_orientation_blind_to_edge(self, step_scan):
        """A vertical edge has no response at pi/2."""
        field = directional_gradient(step_scan, math.pi / 2)
        assert np.all(field.values == 0.0)

    def test_linear_in_the_image(self, rng):
        """grad(a*x + b*y) = a*grad(x) + b*grad(y) for every orientation."""
        first = rng.uniform(0, 100, size=(20, 24))
        second = rng.uniform(0, 100, size=(20, 24))
        a, b = 0.7, 1.5
        combined = ScanImage(a * first + b * second)
        for theta in orientation_set(8):
            expected = (
                a * directional_gradient(ScanImage(first), theta).values
                + b * directional_gradient(ScanImage(second), theta).values
            )
            actual = directional_gradient(combined, theta).values
            np.testing.assert_allclose(actual, expected, rtol=0, atol=1e-9)

    def test_orientation_out_of_range(self, step_scan):
        """theta must lie in [0, 2*pi)."""
        with pytest.raises(InvalidInputError):
            directional_gradient(step_scan, 2 * math.pi)

    def test_flat_scan_has_no_gradient(self, flat_scan):
        """Constant scans give zero Sobel responses."""
        gx, gy = sobel_gradients(flat_scan.pixels)
        assert not gx.any()
        assert not gy.any()


class TestDiffuse:
    """Tests for diffuse."""

    def test_constant_is_fixed_point(self):
        """A constant field does not change."""
        field = np.full((16, 16), 3.5)
        np.testing.assert_array_equal(diffuse(field), field)

    def test_keeps_bounds(self, rng):
        """Values stay within the input's min and max."""
        field = rng.normal(0, 50, size=(32, 32))
        out = diffuse(field, iterations=20)
        assert out.min() >= field.min() - 1e-9
        assert out.max() <= field.max() + 1e-9

    def test_smooths_noise(self, rng):
        """Small-amplitude noise loses variance."""
        field = rng.normal(0, 1, size=(32, 32))
        assert diffuse(field).std() < field.std()

    def test_conserves_mass(self, rng):
        """Zero-flux borders keep the field's sum."""
        field = rng.normal(0, 5, size=(20, 24))
        assert diffuse(field).sum() == pytest.approx(field.sum())

    def test_zero_iterations_copies(self, rng):
        """No iterations returns an equal copy."""
        field = rng.normal(size=(4, 4))
        out = diffuse(field, iterations=0)
        np.testing.assert_array_equal(out, field)
        assert out is not field

    @pytest.mark.parametrize("step", [0.0, 0.3])
    def test_rejects_unstable_step(self, step):
        """Steps outside (0, 0.25] are rejected."""
        with pytest.raises(InvalidInputError):
            diffuse(np.zeros((4, 4)), step=step)
