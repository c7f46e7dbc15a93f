"""Truncated NLS flow in spectral coordinates.

    dc_n/dt = -i z_n^2 c_n + i z_n^s <F(u), e_n>,   u = sum_m c_m z_m^{-s} e_m

with the projection evaluated pseudo-spectrally on the basis grid. This is
the Hamiltonian system dc_n/dt = -i z_n^{2s} dH/d(conj c_n) for

    H(c) = sum_n z_n^{2-2s} |c_n|^2 - int_0^1 V(u) r dr

under the same quadrature, so H and ||u||_{L^2} are exact invariants of the
semi-discrete flow. The linear part is always integrated exactly; time step
size is limited by the nonlinearity only.

All integrators work on arrays of shape (..., N) so whole ensembles advance
together.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .bessel import BesselBasis
from .measure import SpectralState, sobolev_norms
from .nonlinearity import NonlinearitySpec, force, potential

INTEGRATORS = ("strang_rk4", "rk4_integrating_factor")


class FlowDivergence(FloatingPointError):
    """Non-finite values appeared during integration."""

    def __init__(self, t: float):
        super().__init__(f"integration diverged at t = {t:.6g}")
        self.t = t


@dataclass(frozen=True)
class FlowConfig:
    t_final: float = 1.0
    dt: float = 1e-3
    integrator: str = "strang_rk4"
    conservation_tol_H: float = 1e-6
    conservation_tol_L2: float = 1e-8
    record_stride: int = 100

    def __post_init__(self):
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")


class Dynamics:
    """Precomputed operators for one (basis, nonlinearity, frame exponent s).

    ``nonlinear_scale`` multiplies the interaction in the equation of motion
    and in :meth:`hamiltonian`, which is the quantity this (possibly
    detuned) flow conserves. A value other than 1 gives a flow that no
    longer matches the Gibbs weights built from the unscaled potential.
    """

    def __init__(self, basis: BesselBasis, spec: NonlinearitySpec, s: float,
                 nonlinear_scale: float = 1.0):
        self.basis = basis
        self.spec = spec
        self.s = float(s)
        self.nonlinear_scale = float(nonlinear_scale)
        z = basis.zeros
        self.freq = z**2
        self.kinetic = z ** (2.0 - 2.0 * s)
        self.mass = z ** (-2.0 * s)
        # u = c @ synth ; projection term = F(u) @ proj
        self.synth = z[:, None] ** (-s) * basis.eigen_values
        self.proj = np.ascontiguousarray((basis.eigen_values * basis.quad_weights).T * z**s)
        self._buf = None

    def field(self, c) -> np.ndarray:
        c = np.asarray(c)
        return (c.real @ self.synth) + 1j * (c.imag @ self.synth)

    def nonlinear(self, c) -> np.ndarray:
        """i z_n^s <F(u), e_n> (times ``nonlinear_scale``)."""
        c = np.asarray(c)
        shape = c.shape
        n = shape[-1]
        flat = c.reshape(-1, n)
        m = flat.shape[0]
        x, u, m2, y = self._buffers(m)
        # real and imaginary parts stacked so each product is one dgemm call
        x[:m] = flat.real
        x[m:] = flat.imag
        np.matmul(x, self.synth, out=u)
        np.multiply(u[:m], u[:m], out=m2)
        m2 += u[m:] * u[m:]
        g = self._modulus_factor(m2)
        u[:m] *= g
        u[m:] *= g
        np.matmul(u, self.proj, out=y)
        out = np.empty((m, n), dtype=complex)
        # multiply by i
        out.real = -y[m:]
        out.imag = y[:m]
        if self.nonlinear_scale != 1.0:
            out *= self.nonlinear_scale
        return out.reshape(shape)

    def _buffers(self, m):
        buf = self._buf
        if buf is None or buf[0].shape[0] != 2 * m:
            n, k = self.synth.shape
            buf = (np.empty((2 * m, n)), np.empty((2 * m, k)), np.empty((m, k)), np.empty((2 * m, n)))
            self._buf = buf
        return buf

    def _modulus_factor(self, m2):
        """G(|u|^2) with F(u) = G(|u|^2) u, computed in place over ``m2``."""
        spec = self.spec
        if spec.sign == 0:
            m2[...] = 0.0
            return m2
        if spec.kind == "pure_power":
            if spec.alpha == 1.0:
                np.sqrt(m2, out=m2)
            else:
                np.power(m2, 0.5 * spec.alpha, out=m2)
        else:
            m2 += 1.0
            if spec.alpha == 1.0:
                np.sqrt(m2, out=m2)
            else:
                np.power(m2, 0.5 * spec.alpha, out=m2)
        if spec.sign == -1:
            np.negative(m2, out=m2)
        return m2

    def vector_field(self, c) -> np.ndarray:
        return -1j * self.freq * c + self.nonlinear(c)

    def hamiltonian(self, c) -> np.ndarray:
        c = np.asarray(c)
        pot = potential(self.spec, self.field(c)) @ self.basis.quad_weights
        return np.abs(c) ** 2 @ self.kinetic - self.nonlinear_scale * pot

    def mass_of(self, c) -> np.ndarray:
        """||u||_{L^2}^2 = sum z_n^{-2s} |c_n|^2."""
        return np.abs(np.asarray(c)) ** 2 @ self.mass

    def rotate(self, c, t: float) -> np.ndarray:
        return np.exp(-1j * self.freq * t) * c

    def step(self, c, dt: float, integrator: str = "strang_rk4") -> np.ndarray:
        if integrator == "strang_rk4":
            return self._strang(c, dt)
        if integrator == "rk4_integrating_factor":
            return self._ifrk4(c, dt)
        raise ValueError(f"unknown integrator {integrator!r}")

    def _strang(self, c, dt):
        half = np.exp(-0.5j * self.freq * dt)
        c = half * c
        nl = self.nonlinear
        k1 = nl(c)
        k2 = nl(c + 0.5 * dt * k1)
        k3 = nl(c + 0.5 * dt * k2)
        k4 = nl(c + dt * k3)
        c = c + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return half * c

    def _ifrk4(self, c, dt):
        # classical RK4 on a = exp(i z^2 t) c, written back in the c frame
        half = np.exp(-0.5j * self.freq * dt)
        full = half * half
        nl = self.nonlinear
        hc = half * c
        k1 = nl(c)
        k2 = nl(hc + (0.5 * dt * half) * k1)
        k3 = nl(hc + (0.5 * dt) * k2)
        k2 += k3
        k2 *= (dt / 3.0) * half
        k3 *= dt * half
        hc *= half
        k4 = nl(hc + k3)
        k1 *= (dt / 6.0) * full
        k4 *= dt / 6.0
        hc += k1
        hc += k2
        hc += k4
        return hc


def stability_limit(basis: BesselBasis) -> float:
    return 0.5 / basis.zeros[-1] ** 2


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    H: np.ndarray
    L2: np.ndarray
    h_drift: np.ndarray
    l2_drift: np.ndarray
    flagged: np.ndarray
    diverged_at: np.ndarray
    config: FlowConfig
    extra: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def ok(self) -> bool:
        return not bool(np.any(self.flagged))


def _relative(series, ref, floor):
    return np.abs(series - ref) / np.maximum(floor, np.abs(ref))


def integrate(dyn: Dynamics, c0, config: FlowConfig, abort_on_divergence: bool = True,
              sigmas=()) -> Trajectory:
    """Advance ``c0`` (shape (..., N)) to ``config.t_final`` with conservation monitoring.

    A negative ``t_final`` integrates backwards. Samples whose relative H
    drift exceeds ``conservation_tol_H`` or whose relative mass drift exceeds
    ``conservation_tol_L2`` are flagged; non-finite samples are flagged with
    their divergence time, or raise :class:`FlowDivergence` when
    ``abort_on_divergence``.
    """
    if config.integrator == "rk4_integrating_factor" and config.dt > stability_limit(dyn.basis):
        warnings.warn("dt exceeds 0.5/z_N^2 for the integrating-factor scheme", stacklevel=2)
    c = np.array(c0, dtype=complex)
    T = float(config.t_final)
    n_steps = int(math.ceil(abs(T) / config.dt - 1e-9)) if T != 0 else 0
    dt = T / n_steps if n_steps else 0.0

    batch = c.shape[:-1]
    H0 = dyn.hamiltonian(c)
    M0 = dyn.mass_of(c)
    times = [0.0]
    states = [c.copy()]
    Hs = [H0]
    Ms = [M0]
    norms = {sig: [sobolev_norms(c, dyn.basis.zeros, dyn.s, sig)] for sig in sigmas}
    diverged_at = np.full(batch, np.nan)
    bad = np.zeros(batch, dtype=bool)

    for k in range(1, n_steps + 1):
        c = dyn.step(c, dt, config.integrator)
        if k % config.record_stride == 0 or k == n_steps:
            t = k * dt
            finite = np.all(np.isfinite(c), axis=-1)
            if not np.all(finite):
                if abort_on_divergence:
                    raise FlowDivergence(t)
                newly = ~finite & ~bad
                diverged_at = np.where(newly, t, diverged_at)
                bad |= ~finite
                c = np.where(finite[..., None], c, 0)
            times.append(t)
            states.append(c.copy())
            Hs.append(dyn.hamiltonian(c))
            Ms.append(dyn.mass_of(c))
            for sig in sigmas:
                norms[sig].append(sobolev_norms(c, dyn.basis.zeros, dyn.s, sig))

    Hs = np.array(Hs)
    Ms = np.array(Ms)
    h_drift = np.max(_relative(Hs, H0, 1.0), axis=0)
    l2_drift = np.max(_relative(Ms, M0, 1e-300), axis=0)
    flagged = bad | (h_drift > config.conservation_tol_H) | (l2_drift > config.conservation_tol_L2)
    traj = Trajectory(np.array(times), np.array(states), Hs, Ms, h_drift, l2_drift,
                      flagged, diverged_at, config)
    if sigmas:
        traj.extra["sobolev"] = {sig: np.array(v) for sig, v in norms.items()}
    return traj


def vector_field(state: SpectralState, spec: NonlinearitySpec, basis: BesselBasis | None = None) -> np.ndarray:
    basis = basis or state.basis
    return Dynamics(basis, spec, state.s).vector_field(state.coeffs)


def hamiltonian(state: SpectralState, spec: NonlinearitySpec, basis: BesselBasis | None = None) -> float:
    basis = basis or state.basis
    return float(Dynamics(basis, spec, state.s).hamiltonian(state.coeffs))


def step(state: SpectralState, spec: NonlinearitySpec, basis: BesselBasis | None, dt: float,
         integrator: str = "strang_rk4") -> SpectralState:
    basis = basis or state.basis
    out = Dynamics(basis, spec, state.s).step(state.coeffs, dt, integrator)
    if not np.all(np.isfinite(out)):
        raise FlowDivergence(dt)
    return state.with_coeffs(out)


def evolve(state: SpectralState, spec: NonlinearitySpec, basis: BesselBasis | None,
           config: FlowConfig, sigmas=()) -> Trajectory:
    basis = basis or state.basis
    return integrate(Dynamics(basis, spec, state.s), state.coeffs, config, sigmas=sigmas)


def real_coords(c) -> np.ndarray:
    c = np.asarray(c)
    return np.concatenate([c.real, c.imag], axis=-1)


def complex_coords(x) -> np.ndarray:
    x = np.asarray(x)
    n = x.shape[-1] // 2
    return x[..., :n] + 1j * x[..., n:]


def divergence(state: SpectralState, spec: NonlinearitySpec, basis: BesselBasis | None = None,
               h: float = 1e-5) -> float:
    """Real divergence sum_j d(xdot_j)/dx_j of the vector field, by central differences."""
    basis = basis or state.basis
    dyn = Dynamics(basis, spec, state.s)
    x = real_coords(state.coeffs)
    dim = x.size
    plus = x + h * np.eye(dim)
    minus = x - h * np.eye(dim)
    fp = real_coords(dyn.vector_field(complex_coords(plus)))
    fm = real_coords(dyn.vector_field(complex_coords(minus)))
    return float(np.trace(fp - fm) / (2.0 * h))


def jacobian_det(state: SpectralState, spec: NonlinearitySpec, basis: BesselBasis | None,
                 t: float, fd_step: float = 1e-5, dt: float | None = None,
                 integrator: str = "strang_rk4") -> float:
    """det of the real 2N x 2N Jacobian of the time-t flow map at ``state``."""
    basis = basis or state.basis
    if basis.n_modes > 6:
        raise ValueError("jacobian_det is limited to N <= 6")
    if t == 0:
        return 1.0
    dyn = Dynamics(basis, spec, state.s)
    if dt is None:
        dt = 0.02 / basis.zeros[-1] ** 2
    config = FlowConfig(t_final=t, dt=dt, integrator=integrator,
                        conservation_tol_H=np.inf, conservation_tol_L2=np.inf,
                        record_stride=10**9)
    x = real_coords(state.coeffs)
    dim = x.size
    pts = np.concatenate([x + fd_step * np.eye(dim), x - fd_step * np.eye(dim)])
    out = real_coords(integrate(dyn, complex_coords(pts), config).final)
    jac = (out[:dim] - out[dim:]).T / (2.0 * fd_step)
    cols = np.linalg.norm(jac, axis=0)
    if cols.max() > 1e6 * cols.min():
        warnings.warn("flow-map Jacobian is badly conditioned", stacklevel=2)
    return float(np.linalg.det(jac))
