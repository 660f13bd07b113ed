import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from docbin import features as ft
from docbin.errors import InvalidArgument


class TestRelativeDarkness:
    def test_constant(self):
        rd = ft.relative_darkness(np.full((6, 7), 0.4))
        np.testing.assert_array_equal(rd[0], 0)
        np.testing.assert_array_equal(rd[1], 1)
        np.testing.assert_array_equal(rd[2], 0)

    def test_dark_centre(self):
        img = np.ones((3, 3))
        img[1, 1] = 0
        rd = ft.relative_darkness(img, window=3)
        assert tuple(rd[:, 1, 1]) == (0.0, 0.0, 1.0)

    def test_even_window(self):
        with pytest.raises(InvalidArgument):
            ft.relative_darkness(np.ones((4, 4)), window=4)

    @given(st.integers(0, 2**31 - 1), st.sampled_from([3, 5, 7]))
    @settings(max_examples=25, deadline=None)
    def test_partition(self, seed, window):
        img = np.random.default_rng(seed).random((9, 11))
        rd = ft.relative_darkness(img, window)
        np.testing.assert_allclose(rd.sum(axis=0), 1.0, atol=1e-12)
        assert rd.min() >= 0 and rd.max() <= 1

    def test_threshold_in_byte_units(self):
        img = np.full((3, 3), 100 / 255)
        img[0, 0] = 109 / 255   # within +-10 levels
        img[0, 1] = 115 / 255   # lighter
        rd = ft.relative_darkness(img, 3)
        assert rd[2, 1, 1] == pytest.approx(1 / 8)
        assert rd[1, 1, 1] == pytest.approx(7 / 8)


class TestLocalFilter:
    @pytest.mark.parametrize("kind", ["min", "max", "mean", "median"])
    def test_constant(self, kind):
        np.testing.assert_allclose(ft.local_filter(np.full((5, 6), 0.3), kind, 3), 0.3, atol=1e-15)

    def test_constant_std(self):
        assert not ft.local_filter(np.full((5, 6), 0.3), "std", 5).any()

    def test_percentile_endpoints(self):
        img = np.random.default_rng(0).random((8, 8))
        np.testing.assert_array_equal(ft.local_filter(img, "percentile", 3, p=0),
                                      ft.local_filter(img, "min", 3))
        np.testing.assert_array_equal(ft.local_filter(img, "percentile", 3, p=100),
                                      ft.local_filter(img, "max", 3))

    def brute(self, img, window, fn):
        r = window // 2
        p = np.pad(img, r, mode="edge")
        out = np.zeros_like(img)
        for i in range(img.shape[0]):
            for j in range(img.shape[1]):
                out[i, j] = fn(p[i:i + window, j:j + window].ravel())
        return out

    def test_median_brute(self):
        img = np.random.default_rng(1).random((8, 8))
        exp = self.brute(img, 3, lambda v: np.sort(v)[4])
        np.testing.assert_array_equal(ft.local_filter(img, "median", 3), exp)

    def test_percentile_lower_rank(self):
        img = np.random.default_rng(2).random((8, 8))
        exp = self.brute(img, 5, lambda v: np.percentile(v, 10, method="lower"))
        np.testing.assert_array_equal(ft.local_filter(img, "percentile", 5, p=10), exp)

    def test_mean_std_brute(self):
        img = np.random.default_rng(3).random((8, 9))
        np.testing.assert_allclose(ft.local_filter(img, "mean", 5), self.brute(img, 5, np.mean), atol=1e-12)
        np.testing.assert_allclose(ft.local_filter(img, "std", 5), self.brute(img, 5, np.std), atol=1e-7)

    def test_invalid(self):
        with pytest.raises(InvalidArgument):
            ft.local_filter(np.ones((3, 3)), "percentile", 3, p=101)
        with pytest.raises(InvalidArgument):
            ft.local_filter(np.ones((3, 3)), "min", 4)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=20, deadline=None)
    def test_order(self, seed):
        img = np.random.default_rng(seed).random((7, 7))
        lo, med, hi = (ft.local_filter(img, k, 3) for k in ("min", "median", "max"))
        assert (lo <= med).all() and (med <= hi).all()


class TestCanny:
    def test_constant(self):
        assert not ft.canny(np.full((10, 10), 0.5)).any()

    def test_vertical_step(self):
        img = np.zeros((20, 20))
        img[:, 10:] = 1.0
        e = ft.canny(img)
        cols = np.nonzero(e[5:15].any(axis=0))[0]
        assert len(cols) == 1 and cols[0] in (9, 10)
        assert e[5:15, cols[0]].all()

    def test_subset_of_low(self):
        img = np.random.default_rng(0).random((24, 24))
        mag, _, _ = ft.gradient_magnitude(img, 1.0)
        e = ft.canny(img, 1.0, 0.1, 0.2)
        assert e.any()
        assert (mag[e.astype(bool)] / mag.max() >= 0.1).all()

    def test_bad_thresholds(self):
        with pytest.raises(InvalidArgument):
            ft.canny(np.zeros((4, 4)), low=0.3, high=0.2)


class TestStack:
    def test_default_is_four_channels(self):
        img = np.random.default_rng(0).random((8, 8))
        x = ft.build_input_stack(img)
        assert x.shape == (4, 8, 8)
        np.testing.assert_array_equal(x[0], img)

    def test_aux_howe(self):
        img = np.random.default_rng(0).random((8, 8))
        cfg = ft.FeatureConfig.parse("rd,howe")
        x = ft.build_input_stack(img, cfg, aux={"howe": np.ones((8, 8))})
        assert x.shape == (5, 8, 8) and cfg.channels == 5
        np.testing.assert_array_equal(x[4], 1)

    def test_empty(self):
        cfg = ft.FeatureConfig.parse("none")
        assert ft.build_input_stack(np.zeros((3, 3)), cfg).shape == (1, 3, 3)

    def test_aux_mismatch(self):
        with pytest.raises(InvalidArgument):
            ft.build_input_stack(np.zeros((4, 4)), ft.FeatureConfig.parse("howe"),
                                 aux={"howe": np.zeros((3, 3))})

    def test_encode_roundtrip(self):
        cfg = ft.FeatureConfig.parse("rd:5,percentile:25:3,canny:1.5:0.05:0.3,otsu")
        assert ft.FeatureConfig.parse(cfg.encode()) == cfg
        assert cfg.features[0].params == (5, 10 / 255)

    def test_all_channels_in_unit_range(self):
        img = np.random.default_rng(5).random((16, 16))
        cfg = ft.FeatureConfig.parse("rd,min,max,mean,median,std,percentile,canny,otsu,howe")
        x = ft.build_input_stack(img, cfg)
        assert x.shape[0] == cfg.channels == 13
        assert x.min() >= 0 and x.max() <= 1
