import math

import numpy as np
import pytest

from docbin import losses as ls
from docbin.errors import DomainError
from docbin.weights import pseudo_weights, uniform_weights, WeightMaps
from gradcheck import numeric_grad, rel_error


def instance(seed, shape=(8, 8)):
    rng = np.random.default_rng(seed)
    G = (rng.random(shape) < 0.35).astype(np.float64)
    G[shape[0] // 2, shape[1] // 2] = 1
    B = rng.uniform(0.05, 0.95, shape)
    return B, G


def soft_fm(B, G):
    tp = np.sum(B * G)
    r = tp / np.sum(G)
    p = tp / np.sum(B)
    return 2 * p * r / (p + r)


def test_single_pixel():
    G = np.ones((1, 1))
    res = ls.pseudo_f_loss(np.full((1, 1), 0.5), G, uniform_weights(G))
    assert res.value == pytest.approx(1 / 3, abs=1e-15)
    assert -res.grad[0, 0] == pytest.approx(8 / 9, abs=1e-15)


def test_perfect_prediction():
    _, G = instance(0)
    for kind, tol in (("pfm", 1e-5), ("fm", 1e-5), ("pfm+fm", 2e-5), ("ce", 1e-6)):
        assert ls.compute_loss(kind, G.copy(), G, pseudo_weights(G)).value <= tol


def test_all_background():
    G = np.zeros((4, 4))
    with pytest.raises(DomainError):
        ls.f_loss(np.full((4, 4), 0.5), G)


def test_cross_entropy_uniform():
    _, G = instance(1)
    assert ls.cross_entropy_loss(np.full(G.shape, 0.5), G).value == pytest.approx(math.log(2), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_uniform_equals_plain_fm(seed):
    B, G = instance(seed)
    a = ls.pseudo_f_loss(B, G, uniform_weights(G))
    b = ls.f_loss(B, G)
    assert abs(a.value - b.value) < 1e-12
    assert abs(a.value - (1 - soft_fm(B, G))) < 1e-12
    assert np.max(np.abs(a.grad - b.grad)) < 1e-12


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("kind", ls.LOSSES)
def test_gradient_fd(seed, kind):
    B, G = instance(seed)
    Wm = pseudo_weights(G)
    res = ls.compute_loss(kind, B, G, Wm)
    num = numeric_grad(lambda b: ls.compute_loss(kind, b, G, Wm).value, B)
    assert rel_error(res.grad, num) < 1e-6


def test_combined_is_sum():
    B, G = instance(3)
    Wm = pseudo_weights(G)
    c = ls.combined_loss(B, G, Wm)
    a, b = ls.pseudo_f_loss(B, G, Wm), ls.f_loss(B, G)
    assert abs(c.value - a.value - b.value) < 1e-12
    assert np.max(np.abs(c.grad - a.grad - b.grad)) < 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_gradient_sign_on_ink(seed):
    B, G = instance(seed)
    Wm = pseudo_weights(G)
    g = ls.pseudo_f_loss(B, G, Wm).grad
    sel = (G == 1) & (Wm.recall > 0)
    assert (g[sel] <= 0).all()


def test_permutation_invariance():
    B, G = instance(4)
    Wm = pseudo_weights(G)
    perm = np.random.default_rng(0).permutation(B.size)
    p = lambda a: a.ravel()[perm].reshape(B.shape)
    a = ls.pseudo_f_loss(B, G, Wm).value
    b = ls.pseudo_f_loss(p(B), p(G), WeightMaps(p(Wm.recall), p(Wm.precision))).value
    assert abs(a - b) < 1e-12


def test_values_in_range():
    for seed in range(10):
        B, G = instance(seed)
        Wm = pseudo_weights(G)
        for kind in ("pfm", "fm"):
            assert 0 <= ls.compute_loss(kind, B, G, Wm).value <= 1
        assert 0 <= ls.combined_loss(B, G, Wm).value <= 2


def test_batch_mean():
    pairs = [instance(s) for s in range(3)]
    B = np.stack([p[0] for p in pairs])
    G = np.stack([p[1] for p in pairs])
    Ws = [pseudo_weights(g) for g in G]
    r = ls.batch_loss("pfm", B, G, Ws)
    singles = [ls.pseudo_f_loss(B[i], G[i], Ws[i]) for i in range(3)]
    assert r.value == pytest.approx(np.mean([s.value for s in singles]), abs=1e-15)
    np.testing.assert_allclose(r.grad[1], singles[1].grad / 3)
