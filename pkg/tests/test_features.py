"""Feature-bank behavior: integral tables, Haar responses, histograms."""

import numpy as np
import pytest

from classigraph.features import (
    Descriptor,
    ExtractorUnavailableError,
    FeatureSpec,
    descriptor_for,
    descriptor_values,
    extract_gradient_histogram,
    extract_haar,
    extract_hue_histogram,
    integral_image,
    normalized_to_box,
)
from classigraph.images import Image


def test_integral_all_ones_full_sum():
    image = Image(np.ones((2, 2)))
    table = integral_image(image)
    assert table.box_sum((0, 0, 2, 2)) == 4.0


def test_integral_empty_rectangle_is_zero(gray_image):
    table = integral_image(gray_image)
    assert table.box_sum((3, 3, 3, 7)) == 0.0
    assert table.box_sum((5, 2, 4, 6)) == 0.0


def test_integral_corner_zero_and_monotone(gray_image):
    table = integral_image(gray_image).table
    assert table[0, 0] == 0.0
    assert np.all(np.diff(table, axis=0) >= 0)
    assert np.all(np.diff(table, axis=1) >= 0)


def test_integral_matches_brute_force_on_integer_image(rng):
    values = rng.integers(0, 2, size=(5, 5)).astype(np.float64)
    image = Image(values)
    table = integral_image(image)
    checked = 0
    for x0 in range(6):
        for x1 in range(x0 + 1, 6):
            for y0 in range(6):
                for y1 in range(y0 + 1, 6):
                    assert table.box_sum((x0, y0, x1, y1)) == values[y0:y1, x0:x1].sum()
                    checked += 1
    assert checked == 225


class TestHaar:
    def test_constant_image_all_kinds_zero(self):
        image = Image(np.full((8, 8), 0.4))
        table = integral_image(image)
        for kind in ("two-rect-horiz", "two-rect-vert", "three-rect", "four-rect"):
            assert extract_haar(table, (0, 0, 8, 8), kind) == pytest.approx(0.0, abs=1e-15)

    def test_left_half_bright_two_rect_horiz(self):
        values = np.zeros((6, 8))
        values[:, :4] = 1.0
        table = integral_image(Image(values))
        assert extract_haar(table, (0, 0, 8, 6), "two-rect-horiz") == 1.0

    def test_transpose_symmetry_two_rect_vert(self):
        values = np.zeros((6, 8))
        values[:, :4] = 1.0
        table = integral_image(Image(values.T.copy()))
        assert extract_haar(table, (0, 0, 6, 8), "two-rect-vert") == 1.0

    def test_reflection_negates_two_rect(self, rng):
        values = rng.uniform(size=(10, 12))
        flipped = values[:, ::-1].copy()
        a = extract_haar(integral_image(Image(values)), (0, 0, 12, 10), "two-rect-horiz")
        b = extract_haar(integral_image(Image(flipped)), (0, 0, 12, 10), "two-rect-horiz")
        assert a == pytest.approx(-b, abs=1e-12)

    def test_range_bounded(self, rng):
        image = Image(rng.uniform(size=(16, 16)))
        table = integral_image(image)
        for kind in ("two-rect-horiz", "two-rect-vert", "three-rect", "four-rect"):
            for _ in range(20):
                x0 = int(rng.integers(0, 12))
                y0 = int(rng.integers(0, 12))
                x1 = int(rng.integers(x0 + 2, 17))
                y1 = int(rng.integers(y0 + 2, 17))
                value = extract_haar(table, (x0, y0, x1, y1), kind)
                assert -1.0 <= value <= 1.0

    def test_region_outside_image_rejected(self, gray_image):
        table = integral_image(gray_image)
        with pytest.raises(ValueError):
            extract_haar(table, (0, 0, 40, 4), "two-rect-horiz")


class TestGradientHistogram:
    def test_constant_image_zero_descriptor(self):
        image = Image(np.full((10, 10), 0.7))
        descriptor = extract_gradient_histogram(image, (0, 0, 10, 10), 1, 9)
        assert np.all(descriptor.values == 0.0)

    def test_vertical_step_edge_mass_in_bin_zero(self):
        values = np.zeros((8, 8))
        values[:, 4:] = 1.0
        image = Image(values)
        descriptor = extract_gradient_histogram(image, (0, 0, 8, 8), 1, 9)
        # horizontal gradient, unsigned orientation 0
        assert descriptor.values[0] == pytest.approx(1.0)
        assert descriptor.values[1:].sum() == pytest.approx(0.0)

    def test_normalization_sums_to_one(self, rng):
        image = Image(rng.uniform(size=(12, 12)))
        descriptor = extract_gradient_histogram(image, (1, 2, 11, 10), 2, 9)
        assert descriptor.values.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(descriptor.values >= 0.0)

    def test_degenerate_region_rejected(self, gray_image):
        with pytest.raises(ValueError):
            extract_gradient_histogram(gray_image, (0, 0, 1, 5), 1, 9)


class TestHueHistogram:
    def test_pure_red_in_bin_zero(self):
        rgb = np.zeros((6, 6, 3))
        rgb[..., 0] = 1.0
        image = Image.from_rgb(rgb)
        descriptor = extract_hue_histogram(image, (0, 0, 6, 6), 1, 12)
        assert descriptor.values[0] == pytest.approx(1.0)

    def test_pure_gray_zero_descriptor(self):
        rgb = np.full((6, 6, 3), 0.5)
        image = Image.from_rgb(rgb)
        descriptor = extract_hue_histogram(image, (0, 0, 6, 6), 1, 12)
        assert np.all(descriptor.values == 0.0)

    def test_half_red_half_green_split(self):
        rgb = np.zeros((6, 8, 3))
        rgb[:, :4, 0] = 1.0
        rgb[:, 4:, 1] = 1.0
        image = Image.from_rgb(rgb)
        descriptor = extract_hue_histogram(image, (0, 0, 8, 6), 1, 12)
        green_bin = int((1.0 / 3.0) * 12)
        assert descriptor.values[0] == pytest.approx(0.5)
        assert descriptor.values[green_bin] == pytest.approx(0.5)

    def test_grayscale_image_rejected(self, gray_image):
        with pytest.raises(ValueError):
            extract_hue_histogram(gray_image, (0, 0, 8, 8), 1, 12)


class TestDescriptorDispatch:
    def test_lengths(self, rgb_image):
        box = (0, 0, 12, 12)
        assert descriptor_for(FeatureSpec("gradient_hist", cells=1, bins=9), rgb_image, box).values.size == 9
        assert descriptor_for(FeatureSpec("haar", haar_kind="two-rect-horiz"), rgb_image, box).values.size == 1
        assert descriptor_for(FeatureSpec("hue_hist", cells=2, bins=12), rgb_image, box).values.size == 48

    def test_deterministic_repeat(self, rgb_image):
        spec = FeatureSpec("gradient_hist", cells=2, bins=9)
        a = descriptor_values(spec, rgb_image, (2, 2, 14, 14))
        b = descriptor_values(spec, rgb_image, (2, 2, 14, 14))
        assert a.tobytes() == b.tobytes()

    def test_returns_tagged_descriptor(self, rgb_image):
        descriptor = descriptor_for(FeatureSpec("hue_hist", cells=1, bins=12), rgb_image, (0, 0, 8, 8))
        assert isinstance(descriptor, Descriptor)
        assert descriptor.tag == "hue_hist:1x1x12"
        assert descriptor.box == (0, 0, 8, 8)

    def test_declared_but_unimplemented_extractors(self, rgb_image):
        for kind in ("sift", "gabor", "segmentation"):
            with pytest.raises(ExtractorUnavailableError):
                descriptor_values(FeatureSpec(kind), rgb_image, (0, 0, 8, 8))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            FeatureSpec("wavelet")


def test_histogram_mass_zero_or_one_property(rng):
    image = Image.from_rgb(rng.uniform(size=(20, 20, 3)))
    for _ in range(25):
        x0 = int(rng.integers(0, 16))
        y0 = int(rng.integers(0, 16))
        x1 = int(rng.integers(x0 + 2, 21))
        y1 = int(rng.integers(y0 + 2, 21))
        for spec in (FeatureSpec("gradient_hist", cells=2, bins=9),
                     FeatureSpec("hue_hist", cells=2, bins=12)):
            values = descriptor_values(spec, image, (x0, y0, x1, y1))
            assert np.all(values >= 0.0)
            assert values.sum() == pytest.approx(1.0, abs=1e-9) or values.sum() == 0.0


def test_normalized_to_box_minimum_and_clamp():
    assert normalized_to_box((0.0, 0.0, 1.0, 1.0), 10, 8) == (0, 0, 10, 8)
    x0, y0, x1, y1 = normalized_to_box((0.95, 0.95, 0.04, 0.04), 10, 8)
    assert x1 - x0 >= 2 and y1 - y0 >= 2
    assert 0 <= x0 and x1 <= 10 and 0 <= y0 and y1 <= 8
