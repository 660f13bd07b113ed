import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from docbin import inference as inf
from docbin.errors import InvalidArgument
from docbin.features import FeatureConfig, build_input_stack
from docbin.network import NetworkSpec, build_network


def single_scale(depth=4, kernel=5, width=3, seed=0, features="rd"):
    feats = FeatureConfig.parse(features)
    spec = NetworkSpec(depth=depth, width=width, scales=1, kernel=kernel,
                       in_channels=feats.channels, seed=seed)
    return build_network(spec, features=feats)


class TestPlan:
    def test_single_tile(self):
        assert inf.StitchPlan().axis(256) == [(0, 0, 256)]
        assert inf.StitchPlan().axis(100) == [(0, 0, 100)]

    def test_384_grid(self):
        ax = inf.StitchPlan().axis(384)
        assert ax == [(0, 0, 192), (128, 192, 384)]
        # interior crops keep their central 128 pixels
        ax = inf.StitchPlan().axis(512)
        assert ax[1] == (128, 192, 320)
        assert len(inf.StitchPlan().tiles(384, 384)) == 4

    @given(st.integers(1, 1200), st.sampled_from([(256, 128), (64, 32), (64, 64), (32, 8)]))
    @settings(max_examples=60, deadline=None)
    def test_partition(self, n, plan):
        p = inf.StitchPlan(*plan)
        ax = p.axis(n)
        cover = np.zeros(n, int)
        for s, lo, hi in ax:
            assert s <= lo < hi <= s + p.size
            cover[lo:hi] += 1
        np.testing.assert_array_equal(cover, 1)


class TestStitching:
    def test_matches_whole_image_interior(self):
        net = single_scale(depth=8, kernel=17, width=2)
        assert net.receptive_radius() == 64
        img = np.random.default_rng(0).random((300, 420))
        prob = inf.probability_map(net, img)
        whole = net.predict(build_input_stack(img, net.features))
        np.testing.assert_array_equal(prob[64:-64, 64:-64], whole[64:-64, 64:-64])

    def test_small_image_padded(self):
        net = single_scale()
        img = np.random.default_rng(1).random((40, 70))
        prob, mask = inf.binarize_image(net, img, plan=inf.StitchPlan(64, 32))
        assert prob.shape == mask.shape == (40, 70)
        np.testing.assert_array_equal(mask, prob >= 0.5)

    def test_jobs_identical(self):
        net = single_scale()
        img = np.random.default_rng(2).random((150, 150))
        plan = inf.StitchPlan(64, 32)
        np.testing.assert_array_equal(inf.probability_map(net, img, plan=plan),
                                      inf.probability_map(net, img, plan=plan, jobs=3))

    def test_feature_mismatch(self):
        with pytest.raises(InvalidArgument):
            inf.binarize_image(single_scale(), np.zeros((8, 8)), FeatureConfig.parse("none"))


class TestThreshold:
    def test_ends(self):
        p = np.random.default_rng(0).random((5, 5)) * 0.99
        assert inf.threshold(p, 0).all()
        assert not inf.threshold(p, 1).any()

    def test_monotone(self):
        p = np.random.default_rng(1).random((9, 9))
        for a, b in [(0.2, 0.5), (0.5, 0.7)]:
            assert (inf.threshold(p, b) <= inf.threshold(p, a)).all()

    def test_range(self):
        with pytest.raises(InvalidArgument):
            inf.threshold(np.zeros(3), 1.5)


class TestEnsemble:
    def test_majority(self):
        m = [np.array([1]), np.array([1]), np.array([0])]
        assert inf.majority_vote(m, [np.zeros(1)] * 3)[0] == 1

    def test_tie_break(self):
        m = [np.array([1, 1, 1]), np.array([0, 0, 0])]
        p = [np.array([0.9, 0.6, 0.5]), np.array([0.2, 0.3, 0.5])]
        np.testing.assert_array_equal(inf.majority_vote(m, p), [1, 0, 1])

    def test_vote_margin(self):
        masks = [np.array([1])] * 4 + [np.array([0])]
        flipped = [np.array([0])] + masks[1:]
        probs = [np.zeros(1)] * 5
        assert inf.majority_vote(masks, probs)[0] == inf.majority_vote(flipped, probs)[0] == 1

    def test_single_equals_binarize(self):
        net = single_scale(seed=4)
        img = np.random.default_rng(3).random((30, 30))
        _, m = inf.binarize_image(net, img)
        np.testing.assert_array_equal(inf.ensemble_binarize([net], img), m)

    def test_identical_copies(self):
        net = single_scale(seed=5)
        img = np.random.default_rng(4).random((30, 30))
        _, m = inf.binarize_image(net, img)
        np.testing.assert_array_equal(inf.ensemble_binarize([net, net.copy(), net.copy()], img), m)

    def test_mixed_features(self):
        with pytest.raises(InvalidArgument):
            inf.ensemble_binarize([single_scale(), single_scale(features="none")], np.zeros((8, 8)))

    def test_empty(self):
        with pytest.raises(InvalidArgument):
            inf.ensemble_binarize([], np.zeros((8, 8)))
