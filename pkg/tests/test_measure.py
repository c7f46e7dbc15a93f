import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from gibbsdisc.bessel import build_basis
from gibbsdisc.measure import (SpectralState, block_energy_bound, dyadic_levels, dyadic_mask,
                               dyadic_project, effective_sample_size, gibbs_log_density,
                               l2_norm, log_densities, partition_moment, sample_ensemble,
                               sample_gaussians, sample_mu, sobolev_norm, standard_gaussians,
                               tail_curve, tail_fit)
from gibbsdisc.nonlinearity import NonlinearitySpec
from gibbsdisc.transform import synthesize

S = 0.3


@pytest.fixture(scope="module")
def ensemble16(basis16):
    return sample_ensemble(basis16, NonlinearitySpec(), S, 1.0, 40_000, seed=5)


# ---- Gaussian draws ------------------------------------------------------

def test_gaussians_are_unit_complex():
    g = sample_gaussians(4, 1, np.arange(100_000))
    m = np.mean(np.abs(g) ** 2, axis=0)
    assert np.all(np.abs(m - 1) < 0.01)
    assert np.all(np.abs(np.var(g.real, axis=0) - 0.5) < 0.01)


def test_draws_are_keyed_on_seed_and_index():
    a = standard_gaussians(8, 3, 17)
    assert np.array_equal(a, standard_gaussians(8, 3, 17))
    assert np.array_equal(a[:4], standard_gaussians(4, 3, 17))  # truncation-independent
    assert not np.array_equal(a, standard_gaussians(8, 3, 18))
    assert not np.array_equal(a, standard_gaussians(8, 4, 17))


def test_ensemble_reproducible_and_order_free(basis16):
    spec = NonlinearitySpec()
    a = sample_ensemble(basis16, spec, S, 1.0, 300, seed=9)
    b = sample_ensemble(basis16, spec, S, 1.0, 300, seed=9, threads=3)
    assert a.coeffs.tobytes() == b.coeffs.tobytes()
    assert a.log_weights.tobytes() == b.log_weights.tobytes()
    tail = sample_ensemble(basis16, spec, S, 1.0, 100, seed=9, first_index=200)
    assert np.array_equal(tail.coeffs, a.coeffs[200:])


def test_s_preconditions(basis16):
    with pytest.raises(ValueError):
        sample_mu(basis16, 0.5, 0, 0)
    with pytest.warns(UserWarning):
        sample_mu(basis16, 0.4, 0, 0, alpha=1.0)
    with pytest.raises(ValueError):
        sample_ensemble(basis16, NonlinearitySpec(), S, 0.0, 10, seed=0)


# ---- calibration -----------------------------------------------------------

def test_per_mode_variance(ensemble16, basis16):
    a2 = np.abs(ensemble16.coeffs) ** 2
    m = a2.mean(axis=0)
    se = a2.std(axis=0, ddof=1) / math.sqrt(a2.shape[0])
    assert np.all(np.abs(m - basis16.zeros ** (2 * S - 2)) < 3.5 * se)


def test_mode_independence(ensemble16):
    c = ensemble16.coeffs / np.sqrt(np.mean(np.abs(ensemble16.coeffs) ** 2, axis=0))
    M = c.shape[0]
    worst = 0.0
    for m in range(4):
        for n in range(4):
            if m != n:
                prod = c[:, m].real * c[:, n].imag
                z = prod.mean() / (prod.std(ddof=1) / math.sqrt(M))
                worst = max(worst, abs(z))
    assert worst < 3.5


def test_expected_mass_matches_partial_sum(ensemble16, basis16):
    m2 = ensemble16.sobolev_norms(0.0) ** 2
    ref = np.sum(basis16.zeros ** -2.0)
    se = m2.std(ddof=1) / math.sqrt(m2.size)
    assert abs(m2.mean() - ref) < 3 * se
    hs = ensemble16.sobolev_norms(S) ** 2  # sigma = s reduces to sum |c_n|^2 z^0
    assert abs(hs.mean() - np.sum(basis16.zeros ** (2 * S - 2))) < 3 * hs.std(ddof=1) / math.sqrt(hs.size)


def test_partial_sums_approach_a_quarter():
    from gibbsdisc.bessel import bessel_zeros
    z = bessel_zeros(20_000)
    partial = np.cumsum(z ** -2.0)
    gaps = 0.25 - partial[[9, 99, 999, 19_999]]
    assert np.all(gaps > 0) and np.all(np.diff(gaps) < 0)
    assert gaps[-1] < 1e-5


# ---- norms -------------------------------------------------------------------

def test_l2_norm_examples(basis16):
    zero = SpectralState(np.zeros(16, complex), S, basis16)
    assert l2_norm(zero) == 0
    c = np.zeros(16, complex)
    c[0] = basis16.zeros[0] ** S
    assert l2_norm(SpectralState(c, S, basis16)) == pytest.approx(1, rel=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_norms_against_physical_space(index):
    basis = _basis()
    u = sample_mu(basis, S, 1, index)
    vals = u.field().values
    phys = math.sqrt(np.sum(basis.quad_weights * np.abs(vals) ** 2))
    assert abs(l2_norm(u) - phys) < 1e-10
    assert abs(sobolev_norm(u, 0.0) - l2_norm(u)) < 1e-12
    sig = np.linspace(0, 0.49, 8)
    norms = [sobolev_norm(u, x) for x in sig]
    assert np.all(np.diff(norms) >= 0)


_B = {}


def _basis():
    if not _B:
        _B["b"] = build_basis(16, 64)
    return _B["b"]


def test_sobolev_norm_on_basis_state(basis16):
    c = np.zeros(16, complex)
    c[5] = 0.3 - 0.4j
    assert sobolev_norm(SpectralState(c, S, basis16), S) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        sobolev_norm(SpectralState(c, S, basis16), 0.5)


# ---- dyadic blocks -------------------------------------------------------------

def test_dyadic_partition_and_orthogonality(basis64):
    u = sample_mu(basis64, S, 2, 0)
    levels = dyadic_levels(basis64.zeros)
    blocks = [dyadic_project(u, d) for d in levels]
    assert np.array_equal(sum(b.coeffs for b in blocks), u.coeffs)
    for i, a in enumerate(blocks):
        for b in blocks[i + 1:]:
            assert np.vdot(a.physical(), b.physical()) == 0


def test_dyadic_counts_grow_linearly():
    from gibbsdisc.bessel import bessel_zeros
    z = bessel_zeros(5000)
    levels = [d for d in dyadic_levels(z) if 8 <= d and 2 * d <= 1 + z[-1]]
    counts = [int(dyadic_mask(z, d).sum()) for d in levels]
    slope = np.polyfit(np.log(levels), np.log(counts), 1)[0]
    assert abs(slope - 1) < 0.05
    # spacing ~pi gives about N/pi modes per block; small blocks round up
    assert max(c / d for c, d in zip(counts, levels)) <= 0.4
    assert counts[-1] / levels[-1] == pytest.approx(1 / math.pi, abs=0.01)
    with pytest.raises(ValueError):
        dyadic_mask(z, 3)


# ---- Gibbs density ---------------------------------------------------------------

def test_log_density_examples(basis16):
    spec = NonlinearitySpec()
    zero = SpectralState(np.zeros(16, complex), S, basis16)
    assert gibbs_log_density(zero, spec, 1.0) == 0
    u = sample_mu(basis16, S, 3, 1)
    R = l2_norm(u)
    assert gibbs_log_density(u.with_coeffs(u.coeffs * (1 + 1e-9)), spec, R) == -np.inf
    assert np.isfinite(gibbs_log_density(u, spec, R * (1 + 1e-9)))


def test_pure_power_density_refinement():
    spec = NonlinearitySpec("pure_power", 1.0)
    coarse, fine = build_basis(8, 128), build_basis(8, 256)
    for i in range(10):
        u = sample_mu(coarse, S, 4, i)
        a = gibbs_log_density(u, spec, 10.0)
        b = gibbs_log_density(SpectralState(u.coeffs, S, fine), spec, 10.0)
        vals = synthesize(coarse, u.physical()).values
        assert a >= 0
        assert a == pytest.approx(2 / 3 * np.sum(coarse.quad_weights * np.abs(vals) ** 3), rel=1e-13)
        assert abs(a - b) < 1e-8


def test_batched_log_density_matches_single(ensemble16, basis16):
    spec = ensemble16.spec
    for i in range(5):
        single = gibbs_log_density(ensemble16.state(i), spec, 1.0)
        assert single == pytest.approx(ensemble16.log_weights[i], rel=1e-13, abs=1e-15)
    assert np.allclose(log_densities(ensemble16.coeffs[:7], spec, 1.0, basis16, S),
                       ensemble16.log_weights[:7], rtol=1e-13, atol=1e-15)


def test_rejections_follow_the_cutoff(ensemble16):
    outside = ensemble16.sobolev_norms(0.0) > 1.0
    assert np.array_equal(~ensemble16.accepted, outside)
    assert np.all(ensemble16.weights()[outside] == 0)


def test_effective_sample_size():
    assert effective_sample_size(np.zeros(50)) == pytest.approx(50)
    assert effective_sample_size([0.0, -np.inf, -np.inf]) == pytest.approx(1)
    assert effective_sample_size([-np.inf]) == 0
    assert effective_sample_size(np.log([1.0, 3.0])) == pytest.approx(16 / 10)


# ---- tails -----------------------------------------------------------------------------

def test_tail_curve_basics(ensemble16):
    curve = tail_curve(ensemble16, 0.45, np.linspace(0, 3, 61))
    assert curve[0, 1] == 1.0
    assert np.all(np.diff(curve[:, 1]) <= 0)
    weighted = tail_curve(ensemble16, 0.45, np.linspace(0, 3, 61), weighted=True)
    assert np.all(np.diff(weighted[:, 1]) <= 1e-15)


def test_tail_slope_negative(ensemble16):
    norms = ensemble16.sobolev_norms(0.45)
    lam = np.linspace(np.quantile(norms, 0.9), norms.max(), 200)
    fit = tail_fit(tail_curve(ensemble16, 0.45, lam))
    assert fit.slope < 0 and fit.n_points >= 3
    w = tail_curve(ensemble16, 0.45, lam, weighted=True)
    assert tail_fit(w, 1e-3, 5e-2).slope < 0


def test_tail_fit_needs_points():
    with pytest.raises(ValueError):
        tail_fit(np.array([[0.0, 1.0], [1.0, 0.5]]))


def test_high_frequency_tail_shrinks(basis64):
    ens = sample_ensemble(basis64, NonlinearitySpec(), S, 1.0, 20_000, seed=8)
    levels = dyadic_levels(basis64.zeros)
    probs = []
    lam = None
    for n0 in (2, 8, 32):
        mask = np.zeros(64, bool)
        for d in levels:
            if d >= n0:
                mask |= dyadic_mask(basis64.zeros, d)
        hi = np.where(mask, ens.coeffs, 0)
        norms = np.sqrt(np.abs(hi) ** 2 @ basis64.zeros ** (2 * (0.45 - S)))
        if lam is None:
            lam = np.median(norms)
        probs.append(np.mean(norms > lam))
    p = np.array(probs)
    se = np.sqrt(p * (1 - p) / ens.size)
    assert np.all(p[:-1] - p[1:] > 3 * np.maximum(se[:-1], 1e-12))


@pytest.mark.parametrize("lam", [10.0, 20.0, 30.0, 40.0, 60.0])
def test_block_energy_bound_dominates_chi_square(lam):
    # sum of 8 |g_n|^2 with E|g|^2 = 1 is Gamma(8, 1)
    assert stats.gamma.sf(lam, 8) <= block_energy_bound(8, lam)


def test_block_energy_empirical(ensemble16):
    g = sample_gaussians(8, 12, np.arange(50_000))
    energy = np.sum(np.abs(g) ** 2, axis=1)
    for lam in (12.0, 16.0, 20.0):
        p = np.mean(energy > lam)
        assert abs(p - stats.gamma.sf(lam, 8)) < 4 * math.sqrt(p * (1 - p) / energy.size) + 1e-4
        assert p <= block_energy_bound(8, lam)


# ---- partition moments -----------------------------------------------------------

def test_moment_without_interaction_is_acceptance(basis16):
    ens = sample_ensemble(basis16, NonlinearitySpec(sign=0), S, 0.6, 5000, seed=2)
    for q in (1, 3):
        est = partition_moment(ens, q)
        assert est.estimate == pytest.approx(ens.acceptance_fraction, rel=1e-12)


def test_moment_stable_and_monotone_in_R(basis64):
    spec = NonlinearitySpec()
    vals = []
    for R in (0.5, 1.0, 2.0):
        ens = sample_ensemble(basis64, spec, S, R, 20_000, seed=4)
        est = partition_moment(ens, 2)
        vals.append(est.estimate)
        if R == 1.0:
            assert est.stable and not est.heavy_tail
    assert vals[0] <= vals[1] <= vals[2]
    with pytest.raises(ValueError):
        partition_moment(ens, 9)
