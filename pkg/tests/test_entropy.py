import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from infomri.entropy import (
    KSpaceStats, entropy_greedy_mask, estimate_kspace_stats, joint_gaussian_entropy, load_stats,
    marginal_entropy, marginal_entropy_torch, pointwise_terms, save_stats, symmetric_stats,
)
from infomri.kspace import conjugate_flat_indices, dft2
from infomri.sampling import redundancy_ratio

LOG2PI = math.log(2 * math.pi)


def _zero_stats(dims):
    z = np.zeros(dims)
    return KSpaceStats(dims, z, z, z, z)


def test_single_position_standard_gaussian():
    mask = np.zeros((4, 4), bool)
    mask[1, 2] = True
    assert marginal_entropy(mask, _zero_stats((4, 4)), 1.0) == pytest.approx(1 + LOG2PI, abs=1e-12)
    assert 1 + LOG2PI == pytest.approx(2.8379, abs=1e-4)


def test_pair_with_zero_variance_is_independent():
    stats = _zero_stats((4, 4))
    one, pair = np.zeros((4, 4), bool), np.zeros((4, 4), bool)
    one[1, 2] = True
    pair[1, 2] = pair[3, 2] = True
    assert marginal_entropy(pair, stats, 1.0) == pytest.approx(2 * marginal_entropy(one, stats, 1.0), abs=1e-12)


def test_full_mask_unit_noise_zero_variance():
    N = 64
    assert marginal_entropy(np.ones((8, 8), bool), _zero_stats((8, 8)), 1.0) == pytest.approx(N * (1 + LOG2PI))
    t = marginal_entropy_torch(torch.ones(8, 8, dtype=torch.float64), _zero_stats((8, 8)), 1.0)
    assert float(t) == pytest.approx(N * (1 + LOG2PI))


def test_sigma_must_be_positive():
    with pytest.raises(ValueError):
        marginal_entropy(np.ones((2, 2), bool), _zero_stats((2, 2)), 0.0)


def test_pair_share_formula():
    v, s = 0.7, 0.3
    stats = KSpaceStats((4, 4), np.zeros(16), np.zeros(16), np.full(16, v), np.full(16, v))
    h_i, h_j = pointwise_terms(stats, s)
    share = 0.5 * (1 + LOG2PI + 0.5 * math.log(s**2) + 0.5 * math.log(s**2 + 2 * v))
    single = 0.5 * (1 + LOG2PI + math.log(s**2 + v))
    assert h_i[1, 1] == pytest.approx(2 * share)
    assert h_j[1, 1] == pytest.approx(2 * single)


@pytest.mark.parametrize("seed", range(25))
def test_matches_joint_log_det_on_4x4(seed):
    rng = np.random.default_rng(seed)
    stats = symmetric_stats((4, 4), rng)
    mask = rng.random((4, 4)) < rng.uniform(0.2, 1.0)
    if not mask.any():
        mask[0, 1] = True
    sigma = rng.uniform(0.05, 2.0)
    assert marginal_entropy(mask, stats, sigma) == pytest.approx(joint_gaussian_entropy(mask, stats, sigma), abs=1e-9)


def test_estimate_stats_examples():
    rng = np.random.default_rng(0)
    x = rng.random((6, 6))
    one = estimate_kspace_stats([x])
    k = dft2(x)
    np.testing.assert_allclose(one.mu_r, k.real)
    np.testing.assert_allclose(one.mu_c, k.imag)
    assert one.v_r.max() == 0 and one.v_c.max() == 0
    pm = estimate_kspace_stats([x, -x])
    np.testing.assert_allclose(pm.mu_r, 0, atol=1e-15)
    np.testing.assert_allclose(pm.v_r, k.real**2)
    np.testing.assert_allclose(pm.v_c, k.imag**2)
    with pytest.raises(ValueError):
        estimate_kspace_stats([])
    with pytest.raises(ValueError):
        estimate_kspace_stats([x, np.zeros((5, 6))])


def test_real_dataset_stats_are_conjugate_symmetric():
    rng = np.random.default_rng(1)
    stats = estimate_kspace_stats(rng.random((20, 8, 6)))
    conj = conjugate_flat_indices((8, 6))
    for a, sign in ((stats.mu_r, 1), (stats.mu_c, -1), (stats.v_r, 1), (stats.v_c, 1)):
        np.testing.assert_allclose(a.ravel()[conj], sign * a.ravel(), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 3.0))
def test_monotone_in_variance_and_sigma(seed, sigma):
    rng = np.random.default_rng(seed)
    stats = symmetric_stats((4, 4), rng)
    mask = rng.random((4, 4)) < 0.6
    base = marginal_entropy(mask, stats, sigma)
    bigger = KSpaceStats((4, 4), stats.mu_r, stats.mu_c, stats.v_r * 1.5, stats.v_c)
    assert marginal_entropy(mask, bigger, sigma) >= base - 1e-12
    assert marginal_entropy(mask, stats, sigma * 1.2) >= base - 1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 5.0), st.floats(0.01, 5.0))
def test_redundancy_penalty(v, sigma):
    # adding the conjugate of a sampled position gains less than adding an independent twin
    stats = KSpaceStats((4, 4), np.zeros(16), np.zeros(16), np.full(16, v), np.full(16, v))
    base = np.zeros((4, 4), bool)
    base[1, 2] = True
    with_conj, with_indep = base.copy(), base.copy()
    with_conj[3, 2] = True
    with_indep[1, 1] = True
    h0 = marginal_entropy(base, stats, sigma)
    gain_conj = marginal_entropy(with_conj, stats, sigma) - h0
    gain_indep = marginal_entropy(with_indep, stats, sigma) - h0
    assert gain_conj < gain_indep


def test_redundancy_gap_vanishes_with_variance():
    gaps = []
    for v in (1.0, 1e-2, 1e-4, 1e-8):
        stats = KSpaceStats((4, 4), np.zeros(16), np.zeros(16), np.full(16, v), np.full(16, v))
        a, b = np.zeros((4, 4), bool), np.zeros((4, 4), bool)
        a[1, 2] = a[3, 2] = True
        b[1, 2] = b[1, 1] = True
        gaps.append(marginal_entropy(b, stats, 1.0) - marginal_entropy(a, stats, 1.0))
    assert all(x > y for x, y in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-7


def test_torch_relaxation_matches_at_binary_masks():
    rng = np.random.default_rng(3)
    stats = symmetric_stats((6, 6), rng)
    for _ in range(10):
        mask = rng.random((6, 6)) < 0.5
        t = marginal_entropy_torch(torch.as_tensor(mask, dtype=torch.float64), stats, 0.4)
        assert float(t) == pytest.approx(marginal_entropy(mask, stats, 0.4), abs=1e-9)


def test_greedy_first_pick_lowest_index_when_flat():
    stats = KSpaceStats((4, 4), np.zeros(16), np.zeros(16), np.ones(16), np.ones(16))
    p = entropy_greedy_mask(stats, 1.0, 1)
    assert np.flatnonzero(p.mask).tolist() == [0]


def test_greedy_entropy_increases_at_moderate_sigma():
    rng = np.random.default_rng(4)
    stats = symmetric_stats((6, 6), rng)
    prev = -np.inf
    for M in range(1, 37):
        h = marginal_entropy(entropy_greedy_mask(stats, 1.0, M), stats, 1.0)
        assert h > prev
        prev = h


def test_greedy_avoids_conjugates_at_small_sigma():
    rng = np.random.default_rng(5)
    stats = symmetric_stats((8, 8), rng)
    # 4 self-conjugate positions + 30 distinct pairs: 34 non-redundant picks
    for M in (5, 20, 34):
        assert redundancy_ratio(entropy_greedy_mask(stats, 1e-4, M)) == 0
    assert redundancy_ratio(entropy_greedy_mask(stats, 1e-4, 35)) > 0


def test_greedy_rejects_bad_budget():
    with pytest.raises(ValueError):
        entropy_greedy_mask(_zero_stats((2, 2)), 1.0, 0)


def test_stats_file_round_trip(tmp_path):
    stats = symmetric_stats((5, 4), np.random.default_rng(6))
    save_stats(tmp_path / "s.bin", stats)
    back = load_stats(tmp_path / "s.bin")
    assert back.dims == (5, 4)
    for name in ("mu_r", "mu_c", "v_r", "v_c"):
        np.testing.assert_array_equal(getattr(back, name), getattr(stats, name))


def test_negative_variance_rejected():
    with pytest.raises(ValueError):
        KSpaceStats((1, 2), [0, 0], [0, 0], [-1, 0], [0, 0])
