"""Tests for utility functions."""

import json
import math

import numpy as np

from src.base import BoundingBox, ScanImage
from src.utils import (
    PREDICTION_COLOR,
    TRUTH_COLOR,
    UNDEFINED,
    draw_overlay,
    dumps_json,
    read_json,
    round_floats,
    save_normalized_png16,
    to_display_bytes,
    undefined_if_none,
    write_json,
)


class TestRoundFloats:
    """Tests for round_floats."""

    def test_significant_digits(self):
        """Floats keep ten significant digits."""
        assert round_floats(1 / 3) == 0.3333333333

    def test_nested_and_numpy(self):
        """Containers are walked and numpy scalars become Python numbers."""
        out = round_floats({"a": [np.float64(0.5), (np.int64(3),)], 1: 2.0})
        assert out == {"a": [0.5, [3]], "1": 2.0}
        assert type(out["a"][1][0]) is int

    def test_non_finite_is_undefined(self):
        """NaN and infinities are written as undefined."""
        assert round_floats([math.nan, math.inf]) == [UNDEFINED, UNDEFINED]

    def test_undefined_if_none(self):
        """None becomes undefined, other values pass through."""
        assert undefined_if_none(None) == UNDEFINED
        assert undefined_if_none(0.0) == 0.0


class TestJson:
    """Tests for dumps_json, write_json and read_json."""

    def test_deterministic_key_order(self):
        """Insertion order does not change the text."""
        assert dumps_json({"b": 1, "a": 2}) == dumps_json({"a": 2, "b": 1})

    def test_trailing_newline(self):
        """Documents end with a newline."""
        assert dumps_json([]).endswith("\n")

    def test_write_then_read(self, tmp_path):
        """Written documents parse back with rounded floats."""
        path = write_json({"x": 0.1 + 0.2}, tmp_path / "sub" / "doc.json")
        assert read_json(path) == {"x": 0.3}
        assert json.loads(path.read_text(encoding="utf-8")) == {"x": 0.3}


class TestImages:
    """Tests for display conversion, overlays and field dumps."""

    def test_sixteen_bit_display(self):
        """Full-scale 16-bit levels map to 255."""
        img = ScanImage(np.array([[0.0, 65535.0]]), max_level=65536)
        np.testing.assert_array_equal(to_display_bytes(img), [[0, 255]])

    def test_overlay_keeps_size(self):
        """The overlay is the scan's size with both box colors drawn."""
        img = ScanImage(np.full((30, 40), 100.0))
        overlay = draw_overlay(img, [BoundingBox(2, 3, 10, 12)], [BoundingBox(15, 20, 8, 8)])
        assert overlay.size == (40, 30)
        assert overlay.getpixel((3, 2)) == PREDICTION_COLOR
        assert overlay.getpixel((20, 15)) == TRUTH_COLOR
        assert overlay.getpixel((35, 28)) == (100, 100, 100)

    def test_constant_field_dump(self, tmp_path):
        """A constant field dumps as zeros."""
        from PIL import Image

        path = save_normalized_png16(np.full((4, 5), 7.0), tmp_path / "flat.png")
        with Image.open(path) as im:
            assert im.size == (5, 4)
            assert np.asarray(im).max() == 0
