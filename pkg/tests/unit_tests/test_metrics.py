import math

import numpy as np
import pytest

from panosynth.errors import MetricError
from panosynth.metrics import compare_images, column_profile, profile_peaks, psnr, ssim


def _direct_ssim(x, y, window=8):
    values = []
    for i in range(x.shape[0] - window + 1):
        for j in range(x.shape[1] - window + 1):
            px, py = x[i : i + window, j : j + window], y[i : i + window, j : j + window]
            mx, my = px.mean(), py.mean()
            cov = ((px - mx) * (py - my)).mean()
            values.append(
                ((2 * mx * my + 0.01**2) * (2 * cov + 0.03**2))
                / ((mx**2 + my**2 + 0.01**2) * (px.var() + py.var() + 0.03**2))
            )
    return float(np.mean(values))


class TestSsim:
    def test_identical_images(self, rng) -> None:
        x = rng.random((20, 30))
        assert ssim(x, x) == 1.0

    def test_inverted_checkerboard_is_negative(self) -> None:
        x = (np.indices((16, 16)).sum(axis=0) % 2).astype(float)
        assert ssim(x, 1.0 - x) < 0.0

    def test_matches_direct_formula(self, rng) -> None:
        x, y = rng.random((16, 16)), rng.random((16, 16))
        assert ssim(x, y) == pytest.approx(_direct_ssim(x, y), abs=1e-9)

    def test_symmetric(self, rng) -> None:
        x, y = rng.random((12, 12)), rng.random((12, 12))
        assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-12)

    def test_decreases_with_noise_amplitude(self) -> None:
        scores = []
        for amplitude in (0.01, 0.1, 0.5):
            runs = []
            for seed in range(5):
                rng = np.random.default_rng(seed)
                x = rng.random((32, 32))
                runs.append(ssim(x, x + amplitude * rng.normal(size=x.shape)))
            scores.append(np.mean(runs))
        assert scores[0] > scores[1] > scores[2]

    def test_image_smaller_than_window(self) -> None:
        with pytest.raises(MetricError, match="window"):
            ssim(np.zeros((4, 10)), np.zeros((4, 10)))


class TestPsnr:
    def test_identical_is_infinite(self) -> None:
        assert math.isinf(psnr(np.ones((3, 3)), np.ones((3, 3))))

    def test_full_scale_error(self) -> None:
        assert psnr(np.zeros((4, 4)), np.ones((4, 4))) == pytest.approx(0.0)

    def test_known_mse(self) -> None:
        x = np.zeros((8, 8))
        assert psnr(x, x + 0.1) == pytest.approx(20.0)


def test_dimension_mismatch_is_rejected() -> None:
    with pytest.raises(MetricError, match="dimension mismatch"):
        compare_images(np.zeros((8, 9)), np.zeros((9, 8)))


def test_report_key_values() -> None:
    x = np.full((8, 10), 0.25)
    values = compare_images(x, x).to_key_values()
    assert values == {"ssim": "1.000000", "psnr": "inf", "width": "10", "height": "8"}


def test_column_profile_is_the_column_mean() -> None:
    pixels = np.array([[0.0, 1.0, 0.5], [1.0, 1.0, 0.0]])
    np.testing.assert_allclose(column_profile(pixels), [0.5, 1.0, 0.25])


class TestProfilePeaks:
    def test_finds_separated_bumps(self) -> None:
        columns = np.arange(100, dtype=float)
        profile = sum(np.exp(-0.5 * ((columns - c) / 3.0) ** 2) for c in (20, 50, 80))
        peaks = profile_peaks(profile)
        assert len(peaks) == 3
        np.testing.assert_allclose(peaks, [20, 50, 80], atol=1)

    def test_flat_profile_has_no_peaks(self) -> None:
        assert len(profile_peaks(np.full(40, 0.3))) == 0

    def test_short_profile_is_rejected(self) -> None:
        with pytest.raises(MetricError):
            profile_peaks(np.array([1.0, 2.0]))
