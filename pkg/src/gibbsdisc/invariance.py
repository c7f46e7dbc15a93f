"""Push a Gibbs-weighted ensemble through the truncated flow and compare statistics.

Weights are computed once at t = 0 and carried unchanged; if the flow leaves
rho_N invariant, weighted means of any observable agree before and after.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .bessel import BesselBasis
from .flow import Dynamics, FlowConfig, integrate
from .measure import GibbsEnsemble, effective_sample_size, sobolev_norms
from .nonlinearity import NonlinearitySpec

MAX_EXCLUSION = 0.01
MIN_ESS = 100.0
Z_THRESHOLD = 3.0
CHUNK = 512


class InvalidRun(RuntimeError):
    """Too many trajectories failed their conservation monitors."""


def default_observables(s: float) -> list[str]:
    names = ["abs2_c1", "abs2_c2", "abs2_c3", f"hs2_{s:g}", "hs2_0.3", "hs2_0.45",
             "l4_4", "re_c1_c2bar"]
    return list(dict.fromkeys(names))


def evaluate_observable(name: str, coeffs, basis: BesselBasis, s: float) -> np.ndarray:
    """Per-sample values of a named observable on an (M, N) coefficient array.

    Names: ``abs2_c<n>`` (|c_n|^2), ``hs2_<sigma>`` (||u||_{H^sigma}^2),
    ``l2_2`` (||u||_{L^2}^2), ``l4_4`` (int |u|^4 r dr), ``re_c1_c2bar``.
    """
    c = np.atleast_2d(coeffs)
    if name.startswith("abs2_c"):
        n = int(name[6:])
        return np.abs(c[:, n - 1]) ** 2
    if name.startswith("hs2_"):
        return sobolev_norms(c, basis.zeros, s, float(name[4:])) ** 2
    if name == "l2_2":
        return sobolev_norms(c, basis.zeros, s, 0.0) ** 2
    if name == "l4_4":
        n = c.shape[-1]
        synth = basis.zeros[:n, None] ** (-s) * basis.eigen_values[:n]
        u = (c.real @ synth) ** 2 + (c.imag @ synth) ** 2
        return (u * u) @ basis.quad_weights
    if name == "re_c1_c2bar":
        return np.real(c[:, 0] * np.conj(c[:, 1]))
    raise KeyError(f"unknown observable {name!r}")


@dataclass
class PushResult:
    before: np.ndarray
    after: np.ndarray
    log_weights: np.ndarray
    flagged: np.ndarray
    h_drift: np.ndarray
    l2_drift: np.ndarray
    times: np.ndarray
    snapshots: np.ndarray
    config: FlowConfig
    diverged: np.ndarray | None = None

    @property
    def exclusion_rate(self) -> float:
        return float(np.mean(self.flagged))

    @property
    def valid(self) -> bool:
        return self.exclusion_rate <= MAX_EXCLUSION

    def at(self, t: float) -> np.ndarray:
        """Ensemble coefficients at a recorded time."""
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"time {t} was not recorded")
        return self.snapshots[i]


def push_ensemble(ensemble: GibbsEnsemble, spec: NonlinearitySpec, basis: BesselBasis,
                  config: FlowConfig, nonlinear_scale: float = 1.0,
                  record_times=None, threads: int = 1) -> PushResult:
    """Evolve every sample to ``config.t_final`` with weights carried unchanged.

    ``record_times`` (multiples of ``config.dt * config.record_stride``) keeps
    intermediate snapshots, so one run serves several horizons. Samples are
    advanced in fixed chunks of ``CHUNK`` rows; ``threads`` only changes how
    the chunks are scheduled, never the arithmetic.
    """
    coeffs = np.asarray(ensemble.coeffs)

    def run(start):
        dyn = Dynamics(basis, spec, ensemble.s, nonlinear_scale)
        return integrate(dyn, coeffs[start:start + CHUNK], config, abort_on_divergence=False)

    starts = range(0, coeffs.shape[0], CHUNK)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(i) for i in starts]

    times = parts[0].times
    if record_times is None:
        keep = [0, len(times) - 1]
    else:
        keep = []
        for t in record_times:
            i = int(np.argmin(np.abs(times - t)))
            if abs(times[i] - t) > 1e-9 * max(1.0, abs(t)):
                raise ValueError(f"time {t} is not on the recording grid")
            keep.append(i)
    snaps = np.concatenate([p.states[keep] for p in parts], axis=1)
    cat = np.concatenate
    return PushResult(coeffs, cat([p.final for p in parts]), ensemble.log_weights,
                      cat([p.flagged for p in parts]), cat([p.h_drift for p in parts]),
                      cat([p.l2_drift for p in parts]), times[keep], snaps, config,
                      cat([np.isfinite(p.diverged_at) for p in parts]))


@dataclass
class ObservableReport:
    observable_id: str
    weighted_mean_before: float
    weighted_mean_after: float
    pooled_stderr: float
    z_score: float
    effective_sample_size: float
    inconclusive: bool = False
    paired_stderr: float = float("nan")

    @property
    def passed(self) -> bool:
        return not self.inconclusive and abs(self.z_score) <= Z_THRESHOLD

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _weighted_mean_se(w, x):
    sw = w.sum()
    m = float(w @ x / sw)
    se = float(math.sqrt(np.sum((w * (x - m)) ** 2)) / sw)
    return m, se


def invariance_test(before, after, log_weights, basis: BesselBasis, s: float,
                    observables=None, exclude=None) -> list[ObservableReport]:
    """Weighted before/after means with z = (after - before) / pooled SE.

    The pooled SE combines the two self-normalised importance-sampling
    errors as if independent; the paired SE of the per-sample difference
    is reported alongside for reference.
    """
    if observables is None:
        observables = default_observables(s)
    lw = np.asarray(log_weights, dtype=float)
    keep = np.isfinite(lw)
    if exclude is not None:
        keep &= ~np.asarray(exclude)
    lw = lw[keep]
    w = np.exp(lw - lw.max())
    b = np.asarray(before)[keep]
    a = np.asarray(after)[keep]
    ess = effective_sample_size(lw)

    reports = []
    for name in observables:
        ob = evaluate_observable(name, b, basis, s)
        oa = evaluate_observable(name, a, basis, s)
        mb, seb = _weighted_mean_se(w, ob)
        ma, sea = _weighted_mean_se(w, oa)
        _, sed = _weighted_mean_se(w, oa - ob)
        pooled = math.hypot(seb, sea)
        diff = ma - mb
        if pooled > 0:
            z = diff / pooled
        else:
            z = 0.0 if diff == 0 else math.copysign(math.inf, diff)
        reports.append(ObservableReport(name, mb, ma, pooled, z, ess, ess < MIN_ESS, sed))
    return reports


@dataclass
class GrowthTrack:
    times: np.ndarray
    norms: np.ndarray  # shape (len(times),) or (len(times), M)
    extra: dict = field(default_factory=dict)

    def log_ratio_max(self) -> float:
        """max over samples and t of ||u(t)||^2 / (1 + log(1 + t))."""
        n2 = np.atleast_2d(self.norms.T).T ** 2
        return float(np.max(n2 / (1.0 + np.log1p(np.abs(self.times)))[:, None]))

    def percentile(self, q: float) -> np.ndarray:
        if self.norms.ndim == 1:
            return self.norms.copy()
        return np.percentile(self.norms, q, axis=1)


def growth_track(coeffs, spec: NonlinearitySpec, basis: BesselBasis, s: float, sigma: float,
                 times, dt: float, integrator: str = "strang_rk4") -> GrowthTrack:
    """||Phi_N(t) u||_{H^sigma} at the requested times for one state or an (M, N) batch."""
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0) or times[0] < 0:
        raise ValueError("times must be nonnegative and strictly increasing")
    dyn = Dynamics(basis, spec, s)
    c = np.array(coeffs, dtype=complex)
    out = []
    t_now = 0.0
    for t in times:
        if t > t_now:
            cfg = FlowConfig(t_final=t - t_now, dt=dt, integrator=integrator,
                             conservation_tol_H=np.inf, conservation_tol_L2=np.inf,
                             record_stride=10**9)
            c = integrate(dyn, c, cfg).final
            t_now = t
        out.append(sobolev_norms(c, basis.zeros, s, sigma))
    return GrowthTrack(times, np.array(out))
