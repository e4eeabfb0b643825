import math

import numpy as np
import pytest
from scipy import ndimage

from panosynth.errors import EmptyMaskError, JawDetectionError
from panosynth.jawdetect import (
    GaussianFit,
    bounding_box,
    binarize_and_clean,
    contour_area,
    contour_perimeter,
    correct_tilt,
    estimate_tilt,
    extract_contour,
    fit_bulk_mode,
    fit_gaussian,
    histogram,
    jaw_mask,
    mip,
    roi_slices,
    teeth_threshold,
)
from panosynth.phantom import PhantomSpec, generate
from panosynth.volume import WindowSpec, rescale, window

PREPROCESS = WindowSpec(225.0, 3096.0)


def _fit(mu: float, sigma: float) -> GaussianFit:
    return GaussianFit(mu=mu, sigma=sigma, amplitude=1.0, residual=0.0)


def _jaw_contour(volume, roi_z):
    windowed = window(rescale(volume), PREPROCESS)
    _, _, mask = jaw_mask(windowed, roi_z)
    return extract_contour(mask), mask


class TestMip:
    def test_constant_volume(self) -> None:
        values = np.full((4, 5, 6), 0.3)
        np.testing.assert_array_equal(mip(values, "axial").pixels, np.full((5, 6), 0.3))
        np.testing.assert_array_equal(mip(values, "coronal").pixels, np.full((4, 6), 0.3))

    def test_axial_column_maximum(self) -> None:
        values = np.array([1.0, 5.0, 2.0]).reshape(3, 1, 1)
        assert mip(values, "axial").pixels.tolist() == [[5.0]]

    def test_matches_loop_over_slice_range(self, rng) -> None:
        values = rng.random((8, 8, 8))
        image = mip(values, "axial", (2, 6)).pixels
        for y in range(8):
            for x in range(8):
                assert image[y, x] == max(values[z, y, x] for z in range(2, 6))
        coronal = mip(values, "coronal").pixels
        for z in range(8):
            for x in range(8):
                assert coronal[z, x] == max(values[z, y, x] for y in range(8))

    @pytest.mark.parametrize("seed", range(100))
    def test_random_cubes_match_a_triple_loop(self, seed) -> None:
        values = np.random.default_rng(seed).random((16, 16, 16))
        axial = mip(values, "axial").pixels
        coronal = mip(values, "coronal").pixels
        for a in range(16):
            for b in range(16):
                top_axial, top_coronal = -np.inf, -np.inf
                for c in range(16):
                    top_axial = max(top_axial, values[c, a, b])
                    top_coronal = max(top_coronal, values[a, c, b])
                assert axial[a, b] == top_axial
                assert coronal[a, b] == top_coronal

    def test_empty_range_is_rejected(self) -> None:
        with pytest.raises(JawDetectionError):
            mip(np.zeros((4, 4, 4)), "axial", (2, 2))


class TestGaussianFit:
    def test_recovers_exact_gaussian(self) -> None:
        centers = np.arange(200.0, 801.0, 5.0)
        counts = 1000.0 * np.exp(-0.5 * ((centers - 500.0) / 50.0) ** 2)
        fit = fit_gaussian(centers, counts)
        assert fit.converged
        assert fit.mu == pytest.approx(500.0, abs=0.5)
        assert fit.sigma == pytest.approx(50.0, abs=0.5)
        assert fit.amplitude == pytest.approx(1000.0, rel=1e-3)

    def test_symmetric_histogram_centres_the_fit(self) -> None:
        centers = np.arange(11, dtype=np.float64)
        counts = np.array([0, 1, 3, 6, 9, 10, 9, 6, 3, 1, 0], dtype=np.float64)
        assert fit_gaussian(centers, counts).mu == pytest.approx(5.0, abs=1e-4)

    def test_two_point_histogram_is_degenerate(self) -> None:
        with pytest.raises(JawDetectionError, match="degenerate"):
            fit_gaussian(np.array([0.0, 1.0, 2.0]), np.array([4.0, 0.0, 4.0]))

    def test_bulk_mode_is_lowest_heavy_run(self) -> None:
        centers, _ = histogram(np.zeros(1))
        counts = np.zeros_like(centers)
        low = np.exp(-0.5 * ((np.arange(20) - 8) / 3.0) ** 2) * 500
        high = np.exp(-0.5 * ((np.arange(20) - 10) / 3.0) ** 2) * 900
        counts[10:30] = low
        counts[100:120] = high
        fit = fit_bulk_mode(centers, counts)
        assert fit.mu == pytest.approx(centers[18], abs=centers[1] - centers[0])

    def test_narrow_bulk_mode_uses_moments(self) -> None:
        centers, counts = histogram(np.array([0.5] * 10 + [0.9] * 3))
        fit = fit_bulk_mode(centers, counts)
        assert fit.method == "moments"
        assert fit.mu == pytest.approx(centers[np.argmax(counts)])

    def test_histogram_ignores_zero_pixels(self) -> None:
        _, counts = histogram(np.array([0.0, 0.0, 0.25, 0.75]))
        assert counts.sum() == 2


@pytest.mark.parametrize("mu, sigma, expected", [(500.0, 50.0, 600.0), (0.0, 1.0, 2.0), (100.0, 0.5, 101.0)])
def test_teeth_threshold(mu, sigma, expected) -> None:
    assert teeth_threshold(_fit(mu, sigma)) == expected


def test_roi_slices_formula_and_clamp() -> None:
    assert roi_slices(_fit(100.0, 10.0), 200) == (75, 115)
    assert roi_slices(_fit(2.0, 10.0), 50) == (0, 17)


def test_roi_slices_outside_volume_is_rejected() -> None:
    with pytest.raises(JawDetectionError, match="empty ROI"):
        roi_slices(_fit(-100.0, 1.0), 50)


class TestMaskCleaning:
    def test_interior_hole_is_filled(self) -> None:
        img = np.zeros((20, 20))
        img[5:15, 5:15] = 1.0
        img[9, 9] = 0.0
        mask = binarize_and_clean(img, 0.5)
        assert mask[9, 9]
        assert mask.sum() == 100

    def test_isolated_pixel_is_removed(self) -> None:
        img = np.zeros((9, 9))
        img[4, 4] = 1.0
        with pytest.raises(EmptyMaskError):
            binarize_and_clean(img, 0.5)

    def test_largest_component_wins(self) -> None:
        img = np.zeros((30, 30))
        img[2:8, 2:8] = 1.0
        img[15:28, 15:28] = 1.0
        mask = binarize_and_clean(img, 0.5)
        assert mask[20, 20] and not mask[4, 4]

    def test_equal_components_prefer_the_upper_one(self) -> None:
        img = np.zeros((30, 12))
        img[2:8, 3:9] = 1.0
        img[20:26, 3:9] = 1.0
        mask = binarize_and_clean(img, 0.5)
        assert mask[4, 5] and not mask[22, 5]


class TestContour:
    def test_square_boundary_loop(self) -> None:
        mask = np.zeros((7, 7), dtype=bool)
        mask[2:5, 2:5] = True
        contour = extract_contour(mask)
        assert len(contour) == 9
        np.testing.assert_array_equal(contour[0], contour[-1])
        assert len({tuple(p) for p in contour[:-1]}) == 8
        assert bounding_box(contour) == (2.0, 4.0, 2.0, 4.0)

    def test_area_tracks_pixel_count(self, rng) -> None:
        for _ in range(5):
            blob = ndimage.gaussian_filter(rng.random((40, 40)), 3.0) > 0.5
            blob = binarize_and_clean(blob.astype(float), 0.5)
            contour = extract_contour(blob)
            assert abs(contour_area(contour) - blob.sum()) <= len(contour)

    def test_disk_perimeter(self) -> None:
        r = 20
        yy, xx = np.mgrid[:64, :64]
        disk = (xx - 32) ** 2 + (yy - 32) ** 2 <= r * r
        perimeter = contour_perimeter(extract_contour(disk))
        assert abs(perimeter - 2 * math.pi * r) <= 0.15 * 2 * math.pi * r

    def test_two_components_are_rejected(self) -> None:
        mask = np.zeros((10, 10), dtype=bool)
        mask[1:3, 1:3] = True
        mask[6:9, 6:9] = True
        with pytest.raises(JawDetectionError, match="2 components"):
            extract_contour(mask)


class TestTilt:
    def test_rotated_rectangle(self) -> None:
        yy, xx = np.mgrid[:101, :101].astype(float)
        for angle in (-20.0, 0.0, 15.0):
            theta = math.radians(angle)
            # Long axis along the anterior direction (0, -1) turned by angle
            u = (xx - 50) * math.cos(theta) + (yy - 50) * math.sin(theta)
            v = -(xx - 50) * math.sin(theta) + (yy - 50) * math.cos(theta)
            mask = (np.abs(u) <= 10) & (np.abs(v) <= 35)
            estimate = estimate_tilt(extract_contour(mask))
            assert estimate.confident
            assert estimate.angle_deg == pytest.approx(angle, abs=0.5)

    def test_disk_is_not_confident(self) -> None:
        yy, xx = np.mgrid[:64, :64]
        disk = (xx - 32) ** 2 + (yy - 32) ** 2 <= 400
        estimate = estimate_tilt(extract_contour(disk))
        assert not estimate.confident
        assert estimate.angle_deg == 0.0

    def test_untilted_phantom(self, small_phantom) -> None:
        volume, truth = small_phantom
        contour, _ = _jaw_contour(volume, truth.roi_z)
        assert estimate_tilt(contour).angle_deg == pytest.approx(0.0, abs=0.5)

    @pytest.mark.parametrize("tilt", [10.0, -7.0])
    def test_tilted_phantom(self, tilt) -> None:
        volume, truth = generate(PhantomSpec(tilt_deg=tilt), seed=2)
        contour, _ = _jaw_contour(volume, truth.roi_z)
        assert estimate_tilt(contour).angle_deg == pytest.approx(tilt, abs=1.0)

    def test_correction_removes_tilt(self) -> None:
        volume, truth = generate(PhantomSpec(tilt_deg=10.0), seed=4)
        values = rescale(volume)
        _, threshold, _ = jaw_mask(window(values, PREPROCESS), truth.roi_z)
        corrected = correct_tilt(values, 10.0)
        _, _, mask = jaw_mask(window(corrected, PREPROCESS), truth.roi_z, threshold)
        assert abs(estimate_tilt(extract_contour(mask)).angle_deg) < 1.0


class TestCorrectTilt:
    def test_zero_angle_is_identity(self, rng) -> None:
        values = rng.normal(size=(3, 9, 11))
        corrected = correct_tilt(values, 0.0)
        np.testing.assert_array_equal(corrected, values)
        assert corrected is not values

    def test_round_trip_interior(self) -> None:
        # 8-bit grey levels; two bilinear passes stay within 2 levels
        yy, xx = np.mgrid[:64, :64].astype(float)
        smooth = 127.5 + 127.5 * np.sin(xx / 9.0) * np.cos(yy / 11.0)
        values = np.repeat(smooth[None], 2, axis=0)
        back = correct_tilt(correct_tilt(values, 12.0), -12.0)
        interior = (xx - 31.5) ** 2 + (yy - 31.5) ** 2 < 20**2
        assert np.max(np.abs(back[:, interior] - values[:, interior])) <= 2.0

    @pytest.mark.parametrize("angle", [45.0, -45.0, 60.0, 90.0])
    def test_angle_outside_correctable_range(self, angle) -> None:
        with pytest.raises(JawDetectionError, match="correctable range"):
            correct_tilt(np.zeros((1, 8, 8)), angle)

    def test_rotation_direction_matches_phantom_tilt(self) -> None:
        # A jaw tilt with cos 0.8 and sin 0.6 carries the anterior point (20, 5) to (29, 8)
        tilted = np.zeros((1, 41, 41))
        tilted[0, 8, 29] = 1.0
        corrected = correct_tilt(tilted, math.degrees(math.atan2(3.0, 4.0)), fill_value=0.0)
        assert corrected[0, 5, 20] == pytest.approx(1.0)


def test_phantom_mask_with_implants_holds_every_tooth() -> None:
    volume, truth = generate(PhantomSpec(implant_teeth={2, 9}, missing_teeth={5}), seed=5)
    _, mask = _jaw_contour(volume, truth.roi_z)
    _, count = ndimage.label(mask)
    assert count == 1
    for tooth in truth.present_teeth:
        assert mask[int(round(tooth.y)), int(round(tooth.x))]
