import math

import numpy as np
import pytest

from docbin import metrics as mt
from docbin.errors import DomainError
from docbin.weights import pseudo_weights, recall_weights, uniform_weights


# independent double-loop references ------------------------------------------

def ref_fm(B, G):
    tp = fp = fn = 0
    for b, g in zip(B.ravel().tolist(), G.ravel().tolist()):
        tp += b and g
        fp += b and not g
        fn += g and not b
    if tp == 0:
        return 0.0
    p, r = tp / (tp + fp), tp / (tp + fn)
    return 100 * 2 * p * r / (p + r)


def ref_pfm(B, G, Wm):
    num_r = den_r = num_p = den_p = 0.0
    H, W = B.shape
    for i in range(H):
        for j in range(W):
            b, g = float(B[i, j]), float(G[i, j])
            num_r += b * g * Wm.recall[i, j]
            den_r += g * Wm.recall[i, j]
            num_p += g * b * Wm.precision[i, j]
            den_p += b * Wm.precision[i, j]
    R = num_r / den_r
    P = num_p / den_p if den_p else 0.0
    return 0.0 if R + P == 0 else 100 * 2 * R * P / (R + P)


def ref_psnr(B, G):
    diff = sum(int(b != g) for b, g in zip(B.ravel(), G.ravel()))
    return math.inf if diff == 0 else 10 * math.log10(B.size / diff)


def ref_drd(B, G):
    H, W = G.shape
    wm = np.zeros((5, 5))
    for i in range(5):
        for j in range(5):
            if (i, j) != (2, 2):
                wm[i, j] = 1 / math.sqrt((i - 2) ** 2 + (j - 2) ** 2)
    wm /= wm.sum()
    blocks = 0
    for bi in range(H // 8):
        for bj in range(W // 8):
            s = G[bi * 8:bi * 8 + 8, bj * 8:bj * 8 + 8].sum()
            blocks += 0 < s < 64
    total = 0.0
    for x in range(H):
        for y in range(W):
            if B[x, y] == G[x, y]:
                continue
            for i in range(-2, 3):
                for j in range(-2, 3):
                    if 0 <= x + i < H and 0 <= y + j < W:
                        total += abs(int(G[x + i, y + j]) - int(B[x, y])) * wm[i + 2, j + 2]
    return total / blocks


def random_pair(seed, n=32):
    rng = np.random.default_rng(seed)
    G = (rng.random((n, n)) < 0.3).astype(np.uint8)
    B = G.copy()
    flip = rng.random((n, n)) < rng.uniform(0.01, 0.3)
    B[flip] ^= 1
    return B, G


@pytest.mark.parametrize("seed", range(10))
def test_against_references(seed):
    B, G = random_pair(seed)
    Wm = pseudo_weights(G)
    assert abs(mt.fm_metric(B, G) - ref_fm(B, G)) < 1e-9
    assert abs(mt.pfm_metric(B, G, Wm) - ref_pfm(B, G, Wm)) < 1e-9
    assert abs(mt.psnr(B, G) - ref_psnr(B, G)) < 1e-9
    assert abs(mt.drd(B, G) - ref_drd(B, G)) < 1e-9


class TestFM:
    def test_identity(self):
        _, G = random_pair(0)
        assert mt.fm_metric(G, G) == 100

    def test_all_background(self):
        _, G = random_pair(0)
        assert mt.fm_metric(np.zeros_like(G), G) == 0

    def test_counting(self):
        G = np.zeros((4, 4), np.uint8)
        G[1:3, 1:3] = 1
        B = np.zeros_like(G)
        B[1, 1:3] = 1
        B[0, 0] = B[3, 3] = 1
        assert mt.fm_metric(B, G) == pytest.approx(50.0)

    def test_empty_gt(self):
        with pytest.raises(DomainError):
            mt.fm_metric(np.ones((3, 3)), np.zeros((3, 3)))

    def test_transpose_symmetry(self):
        B, G = random_pair(5)
        assert mt.fm_metric(B.T, G.T) == mt.fm_metric(B, G)


class TestPFM:
    def test_identity(self):
        _, G = random_pair(1)
        assert mt.pfm_metric(G, G) == pytest.approx(100.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_uniform_is_fm(self, seed):
        B, G = random_pair(seed)
        assert abs(mt.pfm_metric(B, G, uniform_weights(G)) - mt.fm_metric(B, G)) < 1e-12

    def test_contour_miss(self):
        G = np.zeros((9, 9), np.uint8)
        G[2:7, 2:7] = 1
        B = np.zeros_like(G)
        B[3:6, 3:6] = 1
        rw = recall_weights(G)
        assert not rw[(G == 1) & (B == 0)].any()
        assert mt.pfm_metric(B, G) == pytest.approx(100.0)
        assert mt.fm_metric(B, G) < 100


class TestPSNR:
    def test_one_in_hundred(self):
        G = np.zeros((10, 10), np.uint8)
        B = G.copy()
        B[3, 3] = 1
        assert mt.psnr(B, G) == pytest.approx(20.0, abs=1e-12)

    def test_identity_and_complement(self):
        _, G = random_pair(2)
        assert mt.psnr(G, G) == math.inf
        assert mt.psnr(1 - G, G) == 0.0


class TestDRD:
    def gt(self):
        G = np.zeros((16, 16), np.uint8)
        G[2:6, 2:6] = 1
        return G

    def test_weights(self):
        w = mt.drd_weights()
        assert w[2, 2] == 0 and w.sum() == pytest.approx(1.0, abs=1e-15)

    def test_identity(self):
        G = self.gt()
        assert mt.drd(G, G) == 0

    def test_single_flip(self):
        G = self.gt()
        assert mt.nubn(G) == 1
        B = G.copy()
        B[12, 12] = 1
        assert mt.drd(B, G) == pytest.approx(1.0, abs=1e-12)

    def test_two_flips_additive(self):
        G = self.gt()
        B = G.copy()
        B[12, 12] = 1
        B[12, 5] = 1
        assert mt.drd(B, G) == pytest.approx(2.0, abs=1e-12)

    def test_uniform_gt(self):
        with pytest.raises(DomainError):
            mt.drd(np.zeros((16, 16)), np.zeros((16, 16)))

    def test_partial_blocks_ignored(self):
        G = np.zeros((12, 12), np.uint8)
        G[9, 9] = 1
        assert mt.nubn(G) == 0


class TestAggregate:
    def test_perfect(self):
        _, G = random_pair(3)
        r = mt.evaluate_pair(G, G)
        assert (r.pfm, r.fm, r.psnr, r.drd) == (100.0, 100.0, math.inf, 0.0)
        m = mt.mean_report([r, r])
        assert (m.pfm, m.fm, m.psnr, m.drd) == (100.0, 100.0, math.inf, 0.0)

    def test_mean(self):
        a = mt.MetricReport(90, 40, 10, 1)
        b = mt.MetricReport(80, 60, math.inf, 3)
        m = mt.mean_report([a, b])
        assert (m.fm, m.psnr, m.drd) == (50, 10, 2)
        assert mt.mean_report([a]) == a

    def test_csv(self):
        r = mt.MetricReport(100, 100, math.inf, 0)
        text = mt.report_csv([("a.pbm", r)], r)
        lines = text.splitlines()
        assert lines[0] == "path,pfm,fm,psnr,drd"
        assert lines[1] == "a.pbm,100.000000,100.000000,+inf,0.000000"
        assert lines[2].startswith("mean,")
