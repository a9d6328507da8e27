import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from infomri.metrics import brier, dice, ece, ged, iou, majority_vote, pearson, psnr, ssim


def test_psnr_examples():
    x = np.random.default_rng(0).random((8, 8))
    assert psnr(x, x) == math.inf
    assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.1)) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        psnr(np.zeros(3), np.zeros(4))


def test_ssim_examples():
    rng = np.random.default_rng(1)
    ref = rng.random((32, 32))
    assert ssim(ref, ref) == pytest.approx(1.0)
    assert ssim(ref, ref + rng.normal(scale=0.01, size=ref.shape)) > 0.95
    y, x = np.mgrid[:32, :32]
    grad = (x + y) / 62.0
    assert ssim(grad, 1.0 - grad + 0.5) < 0
    with pytest.raises(ValueError):
        ssim(np.ones((8, 8)), np.ones((8, 8)))


def _masks(idx_a, idx_b, n=16):
    a, b = np.zeros(n, bool), np.zeros(n, bool)
    a[list(idx_a)] = True
    b[list(idx_b)] = True
    return a, b


def test_dice_iou_examples():
    a, b = _masks([0, 1, 2, 3], [2, 3, 4, 5])
    assert dice(a, b) == 0.5
    assert iou(a, b) == pytest.approx(1 / 3)
    assert dice(a, a) == 1 and iou(a, a) == 1
    c, d = _masks([0], [1])
    assert dice(c, d) == 0 and iou(c, d) == 0
    e = np.zeros(4, bool)
    assert dice(e, e) == 1 and iou(e, e) == 1


_MASK = arrays(bool, (5, 5))


@settings(max_examples=100, deadline=None)
@given(_MASK, _MASK)
def test_dice_iou_properties(a, b):
    assert dice(a, b) == dice(b, a) and iou(a, b) == iou(b, a)
    assert 0 <= iou(a, b) <= dice(a, b) <= 1


def test_ged_examples():
    m = np.zeros((4, 4), bool)
    m[:2] = True
    assert ged([m], [m]) == 0
    a, b = _masks([0, 1, 2, 3], [2, 3, 4, 5])
    c, d = _masks([0, 1], [0, 1, 2, 3])  # IoU 0.5
    assert ged([c], [d]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ged([], [a])


def _ged_brute(xs, ys):
    def d(p, q):
        return 1 - iou(p, q)
    cross = np.mean([d(x, y) for x in xs for y in ys])
    wx = np.mean([d(p, q) for p in xs for q in xs])
    wy = np.mean([d(p, q) for p in ys for q in ys])
    return 2 * cross - wx - wy


@settings(max_examples=50, deadline=None)
@given(st.lists(_MASK, min_size=1, max_size=5), st.lists(_MASK, min_size=1, max_size=5))
def test_ged_matches_brute_force(xs, ys):
    assert ged(xs, ys) == pytest.approx(_ged_brute(xs, ys), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(_MASK, min_size=1, max_size=6), st.randoms())
def test_ged_self_is_zero(xs, rnd):
    ys = list(xs)
    rnd.shuffle(ys)
    assert abs(ged(xs, ys)) < 1e-12


def test_ece_examples():
    assert ece([0.9, 0.9, 0.1, 0.1], [1, 0, 0, 0]) == pytest.approx(0.25)
    assert ece(np.ones(10), np.zeros(10)) == pytest.approx(1.0)
    assert ece([0.5, 0.5, 0.0, 0.0], [1, 0, 0, 0]) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        ece([0.5], [1], bins=0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 30, elements=st.floats(0, 1)), arrays(bool, 30), st.randoms())
def test_ece_permutation_invariant(p, t, rnd):
    perm = list(range(30))
    rnd.shuffle(perm)
    assert ece(p[perm], t[perm]) == pytest.approx(ece(p, t), abs=1e-12)
    assert 0 <= ece(p, t) <= 1


def test_brier_examples():
    assert brier([1, 0, 1], [1, 0, 1]) == 0
    assert brier(np.full(7, 0.5), [1, 0, 1, 0, 0, 1, 1]) == 0.25
    assert brier([0.8, 0.3], [1, 0]) == pytest.approx(0.065)


def test_majority_vote_and_pearson():
    stack = np.array([[1, 1, 0, 0], [1, 0, 1, 0], [1, 1, 0, 0]], bool)
    np.testing.assert_array_equal(majority_vote(stack), [True, True, False, False])
    assert majority_vote(stack[:2]).tolist() == [True, False, False, False]
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
