import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gibbsdisc.bessel import ResolutionWarning, bessel_zeros, build_basis, eigen_lp_norm
from gibbsdisc.checks import (CountingQuery, bilinear_deriv_norm, bilinear_norm, block_zeros,
                              count_lambda_tilde, fit_exponent, max_count_over_tau,
                              representation_count, representation_table,
                              running_max_representations, tau_sweep)


def brute_count(q: CountingQuery) -> int:
    z = bessel_zeros(2000)
    n = 0
    for z1 in z:
        if not q.N1 <= 1 + z1 <= 2 * q.N1:
            continue
        for z2 in z:
            if q.N2 <= 1 + z2 <= 2 * q.N2 and 1 + abs(q.tau + z1**2 + z2**2) <= 2 * (q.L1 + q.L2):
                n += 1
    return n


# ---- bilinear norms -----------------------------------------------------

def test_diagonal_is_l4_norm_squared(basis64):
    for n in (1, 5, 20, 64):
        assert bilinear_norm(basis64, n, n) == pytest.approx(eigen_lp_norm(basis64, n, 4) ** 2, abs=1e-8)


def test_symmetry(basis64):
    for n1, n2 in [(1, 7), (3, 40), (12, 13)]:
        assert bilinear_norm(basis64, n1, n2) == bilinear_norm(basis64, n2, n1)
        # the derivative version is not symmetric; only its shape is asserted
        assert bilinear_deriv_norm(basis64, n1, n2) > 0


def test_deriv_ratio_under_refinement():
    coarse, fine = build_basis(16, 64), build_basis(16, 128)
    assert abs(bilinear_deriv_norm(coarse, 16, 16) - bilinear_deriv_norm(fine, 16, 16)) < 1e-6


def test_resolution_warning():
    basis = build_basis(16, 32)
    with pytest.warns(ResolutionWarning):
        bilinear_norm(basis, 16, 16)
    with pytest.raises(IndexError):
        bilinear_norm(basis, 0, 1)


def test_fit_exponent():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    assert fit_exponent(x, 3 * x**0.25) == pytest.approx(0.25)


# ---- counting set -----------------------------------------------------------

def test_query_validation():
    with pytest.raises(ValueError):
        CountingQuery(0.0, 3, 1, 16, 16)
    with pytest.raises(ValueError):
        CountingQuery(0.0, 1, 1, 8192, 16)


def test_block_zeros_are_the_closed_block():
    z = block_zeros(64)
    assert np.all((1 + z >= 64) & (1 + z <= 128))
    all_z = bessel_zeros(100)
    assert z.size == np.sum((1 + all_z >= 64) & (1 + all_z <= 128))


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([1, 2, 4, 8, 16, 32]), st.sampled_from([1, 2, 4, 8, 16, 32]),
       st.sampled_from([1, 2, 4, 64]), st.sampled_from([1, 8]), st.floats(-5000, 10))
def test_count_matches_brute_force(N1, N2, L1, L2, tau):
    q = CountingQuery(tau, L1, L2, N1, N2)
    assert count_lambda_tilde(q) == brute_count(q)


def test_vacuous_constraint_counts_all_pairs():
    N1, N2 = 16, 32
    a, b = block_zeros(N1), block_zeros(N2)
    big = 2 ** math.ceil(math.log2(a.max() ** 2 + b.max() ** 2))
    q = CountingQuery(0.0, big, big, N1, N2)
    assert count_lambda_tilde(q) == a.size * b.size


def test_window_between_lattice_values_is_empty():
    a, b = block_zeros(16) ** 2, block_zeros(16) ** 2
    sums = np.sort(np.add.outer(a, b).ravel())
    gaps = np.diff(sums)
    i = int(np.argmax(gaps))
    assert gaps[i] > 2 * 3  # room for a window of half-width 3 (L1 = L2 = 1)
    tau = -0.5 * (sums[i] + sums[i + 1])
    assert count_lambda_tilde(CountingQuery(tau, 1, 1, 16, 16)) == 0


def test_count_monotone_in_L():
    taus = -np.linspace(100, 20_000, 40)
    prev = None
    for L in (1, 2, 4, 8, 16):
        cur = tau_sweep(64, 64, L, L, taus)
        if prev is not None:
            assert np.all(cur >= prev)
        prev = cur


@pytest.mark.parametrize("N", [4, 16, 64])
def test_exact_sup_over_tau(N):
    best, tau = max_count_over_tau(N, N, 1, 1)
    assert count_lambda_tilde(CountingQuery(tau, 1, 1, N, N)) == best
    a, b = block_zeros(N) ** 2, block_zeros(N) ** 2
    grid = -np.concatenate([np.add.outer(a, b).ravel() + d for d in np.linspace(-3, 3, 25)])
    assert tau_sweep(N, N, 1, 1, grid).max() <= best


# ---- representation counts --------------------------------------------------------

def test_representation_examples():
    assert representation_count(18, 1) == 1
    assert representation_count(18, 50) == 1
    for l in (19, 101, 9999):
        assert representation_count(l, 50) == 0
    with pytest.raises(ValueError):
        representation_count(19, 1)
    # 9 + 49 = 58 two ways: (1, 2) and (2, 1)
    assert representation_count(58, 2) == 2


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 2 * (4 * 30 - 1) ** 2))
def test_table_matches_direct_count(l):
    table = representation_table(30)
    assert (table[l] if l < table.size else 0) == representation_count(l, 30)


def test_window_sums_match_pair_counts():
    n_max = 40
    table = representation_table(n_max)
    sq = (4 * np.arange(1, n_max + 1) - 1) ** 2
    sums = np.add.outer(sq, sq).ravel()
    for lo in (2**k for k in range(4, 13)):
        hi = 2 * lo
        assert table[lo:hi].sum() == np.sum((sums >= lo) & (sums < hi))
    assert table.sum() == n_max**2


def test_running_max_is_monotone():
    r = running_max_representations(10_000)
    assert r.size == 10_001 and np.all(np.diff(r) >= 0)
    assert r[18] == 1 and r[17] == 0
