import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.metrics import structural_similarity

from neurop_diff.metrics import PSNR_CAP, MetricReport, psnr, ssim


def _pair(seed, shape=(3, 24, 24), noise=0.2):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1, 1, shape)
    b = np.clip(a + noise * rng.standard_normal(shape), -1, 1)
    return a, b


def reference_psnr(a, b):
    a01, b01 = (np.asarray(a) + 1) / 2, (np.asarray(b) + 1) / 2
    mse = sum(float(x - y) ** 2 for x, y in zip(a01.ravel(), b01.ravel())) / a01.size
    return 10 * math.log10(1 / mse)


def reference_ssim(a, b):
    ga, gb = ((a + 1) / 2).mean(axis=0), ((b + 1) / 2).mean(axis=0)
    return structural_similarity(
        ga, gb, data_range=1.0, gaussian_weights=True, sigma=1.5, use_sample_covariance=False, win_size=11
    )


class TestPSNR:
    def test_identical_caps(self):
        a, _ = _pair(0)
        assert psnr(a, a) == PSNR_CAP

    def test_constant_offset(self):
        a = np.zeros((3, 8, 8))
        # 0.2 in [-1, 1] is 0.1 in [0, 1]
        assert abs(psnr(a, a + 0.2) - 20.0) < 1e-9

    def test_matches_reference(self):
        a, b = _pair(1)
        assert abs(psnr(a, b) - reference_psnr(a, b)) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))

    def test_monotone_in_noise(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(-0.5, 0.5, (3, 16, 16))
        n = rng.standard_normal(a.shape)
        vals = [psnr(a, a + amp * n) for amp in (0.01, 0.05, 0.1)]
        assert vals[0] > vals[1] > vals[2]

    def test_range_convention(self):
        a, b = _pair(3)
        assert psnr(a, b) == psnr((a + 1) / 2, (b + 1) / 2, value_range=(0, 1))

    def test_accepts_tensors(self):
        a, b = _pair(4)
        assert psnr(torch.from_numpy(a), torch.from_numpy(b)) == psnr(a, b)


class TestSSIM:
    def test_identical_is_one(self):
        a, _ = _pair(5)
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_constant_vs_noise(self):
        rng = np.random.default_rng(6)
        a = np.zeros((3, 32, 32))
        b = np.clip(rng.standard_normal(a.shape), -1, 1)
        assert ssim(a, b) < 0.1

    def test_symmetric(self):
        a, b = _pair(7)
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-12

    def test_matches_skimage(self):
        a, b = _pair(8, shape=(3, 33, 29))
        assert abs(ssim(a, b) - reference_ssim(a, b)) < 1e-4

    def test_window_too_large(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((3, 10, 10)), np.zeros((3, 10, 10)))

    def test_range_convention(self):
        a, b = _pair(9)
        assert abs(ssim(a, b) - ssim((a + 1) / 2, (b + 1) / 2, value_range=(0, 1))) < 1e-12

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), noise=st.floats(0.0, 2.0))
    def test_property_bounded(self, seed, noise):
        a, b = _pair(seed, shape=(3, 12, 12), noise=noise)
        v = ssim(a, b)
        assert -1.0 <= v <= 1.0 + 1e-12
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


class TestReport:
    def test_means_and_dict(self):
        r = MetricReport()
        a, b = _pair(10)
        r.add("x", a, b)
        r.add("y", a, a)
        d = r.to_dict()
        assert len(d["per_image"]) == 2
        assert r.mean_psnr == pytest.approx((psnr(a, b) + PSNR_CAP) / 2)
        assert 0 < r.mean_ssim <= 1

    def test_empty_is_nan(self):
        assert math.isnan(MetricReport().mean_psnr)
