import itertools

import numpy as np
import pytest

from docbin import baselines as bl
from docbin.errors import InvalidArgument


def brute_otsu(img):
    v = np.clip(np.round(img * 255), 0, 255).ravel()
    best, best_t = -1.0, None
    for t in range(256):
        a, b = v[v <= t], v[v > t]
        if len(a) == 0 or len(b) == 0:
            continue
        var = len(a) * len(b) / len(v) ** 2 * (a.mean() - b.mean()) ** 2
        if var > best + 1e-9:
            best, best_t = var, t
    return best_t


class TestOtsu:
    def test_two_levels(self):
        img = np.array([0.0] * 50 + [1.0] * 50).reshape(10, 10)
        assert bl.otsu_threshold(img) == 0
        np.testing.assert_array_equal(bl.otsu(img), (img == 0).astype(np.uint8))

    def test_constant_warns(self):
        with pytest.warns(RuntimeWarning):
            m = bl.otsu(np.full((4, 4), 0.3))
        assert not m.any()

    @pytest.mark.parametrize("seed", range(8))
    def test_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        img = np.concatenate([rng.normal(0.3, 0.1, 200), rng.normal(0.7, 0.15, 300)])
        img = np.clip(img, 0, 1).reshape(20, 25)
        assert bl.otsu_threshold(img) == brute_otsu(img)


def naive_sauvola(img, window, k, R):
    r = window // 2
    p = np.pad(img, r, mode="edge")
    out = np.zeros(img.shape, np.uint8)
    for i in range(img.shape[0]):
        for j in range(img.shape[1]):
            w = p[i:i + window, j:j + window]
            T = w.mean() * (1 + k * (w.std() / R - 1))
            out[i, j] = img[i, j] <= T
    return out


class TestSauvola:
    def test_constant(self):
        assert not bl.sauvola(np.full((9, 9), 0.6), 5).any()

    def test_k_zero_is_local_mean(self):
        img = np.random.default_rng(0).random((12, 12))
        from docbin.features import local_filter
        exp = (img <= local_filter(img, "mean", 5)).astype(np.uint8)
        np.testing.assert_array_equal(bl.sauvola(img, 5, k=0.0), exp)

    @pytest.mark.parametrize("seed", range(3))
    def test_naive(self, seed):
        img = np.random.default_rng(seed).random((32, 32))
        np.testing.assert_array_equal(bl.sauvola(img, 7, 0.2, 0.5), naive_sauvola(img, 7, 0.2, 0.5))

    def test_threshold_surface(self):
        img = np.random.default_rng(9).random((32, 32))
        r = 3
        p = np.pad(img, r, mode="edge")
        T = bl.sauvola_threshold(img, 7)
        for i in range(32):
            for j in range(32):
                w = p[i:i + 7, j:j + 7]
                assert abs(T[i, j] - w.mean() * (1 + 0.2 * (w.std() / 0.5 - 1))) < 1e-9

    def test_even_window(self):
        with pytest.raises(InvalidArgument):
            bl.sauvola(np.ones((5, 5)), 4)


class TestLaplacian:
    def test_constant(self):
        assert not bl.laplacian(np.full((5, 5), 0.7)).any()

    def test_ramp(self):
        img = np.add.outer(np.arange(6.0), 2 * np.arange(7.0)) / 20
        np.testing.assert_allclose(bl.laplacian(img)[1:-1, 1:-1], 0, atol=1e-12)

    def test_spike(self):
        img = np.zeros((5, 5))
        img[2, 2] = 1
        L = bl.laplacian(img)
        assert L[2, 2] == -4 and L[1, 2] == L[3, 2] == L[2, 1] == L[2, 3] == 1


def all_labelings(H, W):
    return np.array(list(itertools.product([0, 1], repeat=H * W)), np.uint8).reshape(-1, H, W)


def brute_min(g, labs):
    y = labs.astype(bool)
    e = (g.sink * y).sum((1, 2)) + (g.source * ~y).sum((1, 2))
    e = e + (g.right * (y[:, :, 1:] != y[:, :, :-1])).sum((1, 2))
    e = e + (g.down * (y[:, 1:, :] != y[:, :-1, :])).sum((1, 2))
    return e.min()


class TestMaxFlow:
    def test_no_sink(self):
        g = bl.GridGraph(np.ones((3, 3)), np.zeros((3, 3)), np.ones((3, 2)), np.ones((2, 3)))
        labels, flow = bl.max_flow(g)
        assert labels.all() and flow == 0

    def test_hand_cut(self):
        # p0 prefers source strongly, p1 prefers sink; link 2 -> cut {p0} | {p1}
        g = bl.GridGraph(np.array([[5.0, 0.0]]), np.array([[0.0, 4.0]]),
                         np.array([[2.0]]), np.zeros((0, 2)))
        labels, flow = bl.max_flow(g)
        np.testing.assert_array_equal(labels, [[1, 0]])
        assert flow == 2.0 == min(5.0, 4.0, 2.0)

    @pytest.mark.parametrize("seed", range(12))
    def test_exhaustive(self, seed):
        rng = np.random.default_rng(seed)
        g = bl.GridGraph(rng.integers(0, 8, (4, 4)), rng.integers(0, 8, (4, 4)),
                         rng.integers(0, 8, (4, 3)), rng.integers(0, 8, (3, 4)))
        labels, flow = bl.max_flow(g)
        best = brute_min(g, all_labelings(4, 4))
        assert g.energy(labels) == best
        assert flow == pytest.approx(best)

    def test_negative_capacity(self):
        with pytest.raises(InvalidArgument):
            bl.GridGraph(-np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 1)), np.ones((1, 2)))


class TestHowe:
    def test_c_zero_sign_rule(self):
        img = np.random.default_rng(0).random((10, 10))
        L = bl.laplacian(img)
        np.testing.assert_array_equal(bl.howe(img, c=0.0), (L > 0).astype(np.uint8))

    @pytest.mark.parametrize("seed", range(6))
    def test_exhaustive(self, seed):
        img = np.random.default_rng(seed).random((4, 4))
        g = bl.howe_graph(img, c=40.0)
        labels, _ = bl.max_flow(g)
        assert g.energy(labels) == pytest.approx(brute_min(g, all_labelings(4, 4)), abs=1e-9)

    def test_smoothing_monotone(self):
        from docbin.features import canny
        for seed in range(4):
            img = np.random.default_rng(seed).random((12, 12))
            edges = canny(img).astype(bool)
            free_r = ~(edges[:, 1:] | edges[:, :-1])
            free_d = ~(edges[1:, :] | edges[:-1, :])
            counts = []
            for c in (0.0, 1.0, 4.0):
                y = bl.howe(img, c=c).astype(bool)
                counts.append(int(((y[:, 1:] != y[:, :-1]) & free_r).sum()
                                  + ((y[1:, :] != y[:-1, :]) & free_d).sum()))
            assert counts[0] >= counts[1] >= counts[2]

    def test_constant_offset_invariance(self):
        img = np.random.default_rng(3).integers(40, 200, (24, 24)) / 256
        np.testing.assert_array_equal(bl.howe(img), bl.howe(img + 0.125))

    def test_dark_strokes_are_ink(self):
        img = np.full((24, 24), 0.9)
        img[6:18, 10:14] = 0.2
        y = bl.howe(img)
        assert y[8:16, 11:13].all()
        assert not y[:3].any() and not y[:, :4].any()
