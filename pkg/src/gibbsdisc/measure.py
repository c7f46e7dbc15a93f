"""Gaussian base measure mu_N, the Gibbs density f(u) and ensemble statistics.

A state u = sum_n c_n e_{n,s} is stored by its coefficients c_n in the
rescaled frame e_{n,s} = z_n^{-s} e_n. Under mu_N the c_n are independent,
c_n = g_n z_n^{s-1} with g_n standard complex Gaussians (E|g_n|^2 = 1).

rho_N is represented by importance weights f(u) on mu_N samples:
log f(u) = int_0^1 V(u) r dr when ||u||_{L^2} <= R, and -inf otherwise.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bessel import BesselBasis
from .nonlinearity import NonlinearitySpec, potential
from .transform import NodalField, expand

CHUNK = 4096


@dataclass(frozen=True, eq=False)
class SpectralState:
    coeffs: np.ndarray
    s: float
    basis: BesselBasis

    @property
    def basis_id(self) -> str:
        return self.basis.basis_id

    def physical(self) -> np.ndarray:
        """Coefficients against the unweighted orthonormal e_n."""
        return self.coeffs * self.basis.zeros[: self.coeffs.shape[-1]] ** (-self.s)

    def field(self) -> NodalField:
        return NodalField(expand(self.basis, self.physical()), self.basis.basis_id)

    def with_coeffs(self, coeffs) -> "SpectralState":
        return SpectralState(np.asarray(coeffs, dtype=complex), self.s, self.basis)


def default_s(alpha: float) -> float:
    return 0.9 * alpha / (alpha + 2.0)


def _check_s(s: float, alpha: float | None = None) -> None:
    if not 0 < s < 0.5:
        raise ValueError(f"s must lie in (0, 1/2), got {s}")
    if alpha is not None and s >= alpha / (alpha + 2.0):
        warnings.warn(f"s={s} outside (0, alpha/(alpha+2)) for alpha={alpha}", stacklevel=3)


def standard_gaussians(n_modes: int, seed: int, index: int) -> np.ndarray:
    """Complex g_1..g_N for sample ``index``; mode n always uses draws 2n-2, 2n-1.

    Keyed on (seed, index) so samples are reproducible in any order and the
    first N modes do not depend on the truncation.
    """
    rng = np.random.default_rng([int(seed), int(index)])
    x = rng.standard_normal(2 * n_modes).reshape(n_modes, 2)
    return (x[:, 0] + 1j * x[:, 1]) * math.sqrt(0.5)


def sample_gaussians(n_modes: int, seed: int, indices) -> np.ndarray:
    indices = np.asarray(indices)
    out = np.empty((indices.size, n_modes), dtype=complex)
    for row, i in enumerate(indices):
        out[row] = standard_gaussians(n_modes, seed, int(i))
    return out


def mu_scales(basis: BesselBasis, s: float) -> np.ndarray:
    """Standard deviations z_n^{s-1} of the coefficients under mu_N."""
    return basis.zeros ** (s - 1.0)


def sample_mu(basis: BesselBasis, s: float, rng_seed: int, index: int,
              alpha: float | None = None) -> SpectralState:
    _check_s(s, alpha)
    g = standard_gaussians(basis.n_modes, rng_seed, index)
    return SpectralState(g * mu_scales(basis, s), s, basis)


def sobolev_norms(coeffs, zeros, s: float, sigma: float) -> np.ndarray:
    """(sum_n z_n^{2(sigma-s)} |c_n|^2)^{1/2} over the last axis."""
    c = np.asarray(coeffs)
    z = np.asarray(zeros)[: c.shape[-1]]
    return np.sqrt(np.abs(c) ** 2 @ z ** (2.0 * (sigma - s)))


def l2_norm(state: SpectralState) -> float:
    return float(sobolev_norms(state.coeffs, state.basis.zeros, state.s, 0.0))


def sobolev_norm(state: SpectralState, sigma: float) -> float:
    if not 0 <= sigma < 0.5:
        raise ValueError("sigma must lie in [0, 1/2)")
    return float(sobolev_norms(state.coeffs, state.basis.zeros, state.s, sigma))


def dyadic_mask(zeros, dyadic_N: int) -> np.ndarray:
    """Modes with N <= 1 + z_n < 2N."""
    if dyadic_N < 1 or dyadic_N & (dyadic_N - 1):
        raise ValueError(f"dyadic_N must be a power of two, got {dyadic_N}")
    bracket = 1.0 + np.asarray(zeros)
    return (bracket >= dyadic_N) & (bracket < 2 * dyadic_N)


def dyadic_levels(zeros) -> list[int]:
    top = 1.0 + float(np.max(zeros))
    levels = []
    d = 1
    while d <= top:
        levels.append(d)
        d *= 2
    return levels


def dyadic_project(state: SpectralState, dyadic_N: int) -> SpectralState:
    mask = dyadic_mask(state.basis.zeros[: state.coeffs.shape[-1]], dyadic_N)
    return state.with_coeffs(np.where(mask, state.coeffs, 0))


def log_densities(coeffs, spec: NonlinearitySpec, R: float, basis: BesselBasis, s: float,
                  alpha: float | None = None) -> np.ndarray:
    """Batched log f(u): int V(u) r dr inside the L^2 ball of radius R, -inf outside."""
    coeffs = np.atleast_2d(coeffs)
    n = coeffs.shape[-1]
    scale = basis.zeros[:n] ** (-s)
    out = np.empty(coeffs.shape[0])
    for start in range(0, coeffs.shape[0], CHUNK):
        block = coeffs[start:start + CHUNK]
        values = expand(basis, block * scale)
        out[start:start + CHUNK] = potential(spec, values, alpha) @ basis.quad_weights
    norms = sobolev_norms(coeffs, basis.zeros, s, 0.0)
    out[norms > R] = -np.inf
    return out


def gibbs_log_density(state: SpectralState, spec: NonlinearitySpec, R: float,
                      basis: BesselBasis | None = None) -> float:
    """log f(u); ``-inf`` marks a state rejected by the L^2 cutoff."""
    basis = basis or state.basis
    return float(log_densities(state.coeffs[None], spec, R, basis, state.s)[0])


def effective_sample_size(log_weights) -> float:
    lw = np.asarray(log_weights, dtype=float)
    ok = np.isfinite(lw)
    if not np.any(ok):
        return 0.0
    w = np.exp(lw[ok] - lw[ok].max())
    return float(w.sum() ** 2 / np.sum(w * w))


@dataclass(eq=False)
class GibbsEnsemble:
    coeffs: np.ndarray
    log_weights: np.ndarray
    R: float
    seed: int
    s: float
    spec: NonlinearitySpec
    basis: BesselBasis
    first_index: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return int(self.coeffs.shape[0])

    @property
    def accepted(self) -> np.ndarray:
        return np.isfinite(self.log_weights)

    @property
    def acceptance_fraction(self) -> float:
        return float(np.mean(self.accepted))

    def weights(self) -> np.ndarray:
        """Gibbs weights f(u_i) (zero for rejected samples)."""
        return np.where(self.accepted, np.exp(np.where(self.accepted, self.log_weights, 0.0)), 0.0)

    def ess(self) -> float:
        return effective_sample_size(self.log_weights)

    def state(self, i: int) -> SpectralState:
        return SpectralState(self.coeffs[i], self.s, self.basis)

    def sobolev_norms(self, sigma: float) -> np.ndarray:
        return sobolev_norms(self.coeffs, self.basis.zeros, self.s, sigma)

    def with_coeffs(self, coeffs) -> "GibbsEnsemble":
        return GibbsEnsemble(np.asarray(coeffs), self.log_weights, self.R, self.seed, self.s,
                             self.spec, self.basis, self.first_index, dict(self.meta))


def sample_ensemble(basis: BesselBasis, spec: NonlinearitySpec, s: float, R: float,
                    size: int, seed: int, first_index: int = 0, threads: int = 1) -> GibbsEnsemble:
    """Draw ``size`` samples from mu_N and attach their Gibbs log-weights.

    Work is split into fixed chunks of sample indices; ``threads`` only
    schedules them, so the result does not depend on it.
    """
    _check_s(s, spec.alpha)
    if R <= 0:
        raise ValueError("cutoff radius R must be positive")
    scales = mu_scales(basis, s)

    def run(start):
        idx = np.arange(start, min(start + CHUNK, first_index + size))
        c = sample_gaussians(basis.n_modes, seed, idx) * scales
        return c, log_densities(c, spec, R, basis, s)

    starts = range(first_index, first_index + size, CHUNK)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(i) for i in starts]
    coeffs = np.concatenate([p[0] for p in parts]) if parts else np.empty((0, basis.n_modes), complex)
    logw = np.concatenate([p[1] for p in parts]) if parts else np.empty(0)
    return GibbsEnsemble(coeffs, logw, float(R), int(seed), float(s), spec, basis, first_index)


def tail_curve(ensemble: GibbsEnsemble, sigma: float, lambdas, weighted: bool = False) -> np.ndarray:
    """Rows (lambda, P[||u||_{H^sigma} > lambda]) under mu_N, or rho_N if ``weighted``."""
    norms = ensemble.sobolev_norms(sigma)
    lambdas = np.asarray(lambdas, dtype=float)
    if weighted:
        w = ensemble.weights()
    else:
        w = np.ones_like(norms)
    order = np.argsort(norms)
    sorted_norms = norms[order]
    tail_mass = np.concatenate([np.cumsum(w[order][::-1])[::-1], [0.0]])
    pos = np.searchsorted(sorted_norms, lambdas, side="right")
    probs = tail_mass[pos] / w.sum()
    return np.column_stack([lambdas, probs])


@dataclass(frozen=True)
class TailFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int


def tail_fit(curve, p_min: float = 1e-3, p_max: float = 1e-2) -> TailFit:
    """Least-squares fit of log P against lambda^2 over rows with p_min <= P <= p_max."""
    curve = np.asarray(curve)
    lam, p = curve[:, 0], curve[:, 1]
    sel = (p >= p_min) & (p <= p_max)
    if sel.sum() < 3:
        raise ValueError("fewer than three tail points inside the probability window")
    x, y = lam[sel] ** 2, np.log(p[sel])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return TailFit(float(slope), float(intercept), float(r2), int(sel.sum()))


@dataclass(frozen=True)
class MomentEstimate:
    estimate: float
    stderr: float
    first_half: float
    second_half: float
    half_stderr: float
    stable: bool
    heavy_tail: bool


def partition_moment(ensemble: GibbsEnsemble, q: float) -> MomentEstimate:
    """Monte Carlo E_mu[f(u)^q], rejected samples contributing zero."""
    if not 1 <= q <= 8:
        raise ValueError("q must lie in [1, 8]")
    lw = q * ensemble.log_weights
    finite = np.isfinite(lw)
    shift = lw[finite].max() if np.any(finite) else 0.0
    scaled = np.where(finite, np.exp(np.where(finite, lw - shift, 0.0)), 0.0)

    m = scaled.size
    est = scaled.mean()
    se = scaled.std(ddof=1) / math.sqrt(m)
    h = m // 2
    a, b = scaled[:h], scaled[h:]
    ma, mb = a.mean(), b.mean()
    se_half = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
    stable = abs(ma - mb) <= 3.0 * se_half

    top = np.sort(scaled)[::-1][: max(1, m // 100)]
    heavy = top.sum() > 0.5 * scaled.sum() if scaled.sum() > 0 else False

    factor = math.exp(shift)
    return MomentEstimate(est * factor, se * factor, ma * factor, mb * factor,
                          se_half * factor, bool(stable), bool(heavy))


def block_energy_bound(block_size: int, lam) -> np.ndarray:
    """Chernoff bound exp(|L| log 2 - lambda/2) on P[sum_{n in L} |g_n|^2 > lambda]."""
    return np.exp(block_size * math.log(2.0) - 0.5 * np.asarray(lam, dtype=float))
