"""Bessel functions J0/J1, the zeros of J0 and the radial Fourier-Bessel basis.

All L^2 / L^p integrals on the disc are taken as ``int_0^1 |f(r)|^p r dr``,
i.e. without the angular factor 2*pi. The factor is a constant and cancels
in every ratio the package reports.
"""
from __future__ import annotations

import hashlib
import math
import struct
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

SERIES_MAX = 3.0
ASYMPTOTIC_MIN = 25.0
_N_SERIES = 40
_N_ASYMPTOTIC = 26

BASIS_MAGIC = b"GDBASIS\x00"
BASIS_VERSION = 1


class ZeroFindingError(RuntimeError):
    """Newton iteration for a zero of J0 lost its bracket."""


class ResolutionWarning(UserWarning):
    """The quadrature grid is too coarse to resolve the requested integrand."""


def _series(x):
    q = -0.25 * x * x
    t0 = np.ones_like(x)
    t1 = 0.5 * x
    s0 = t0.copy()
    s1 = t1.copy()
    for k in range(1, _N_SERIES):
        t0 = t0 * q / (k * k)
        t1 = t1 * q / (k * (k + 1))
        s0 += t0
        s1 += t1
    return s0, s1


def _miller(x):
    # backward recurrence J_{k-1} = (2k/x) J_k - J_{k+1}, normalised by
    # J_0 + 2 sum_{k>=1} J_{2k} = 1
    top = int(2 * math.ceil((float(np.max(x)) + 40.0) / 2.0))
    b_next = np.zeros_like(x)
    b = np.full_like(x, 1e-30)
    norm = np.zeros_like(x)
    j1 = None
    for k in range(top, 0, -1):
        b_prev = (2.0 * k / x) * b - b_next
        b_next, b = b, b_prev
        # b now holds J_{k-1} (unnormalised)
        if (k - 1) % 2 == 0 and k - 1 > 0:
            norm += 2.0 * b
        if k - 1 == 1:
            j1 = b.copy()
        big = np.abs(b) > 1e250
        if np.any(big):
            scale = np.where(big, 1e-250, 1.0)
            b *= scale
            b_next *= scale
            norm *= scale
            if j1 is not None:
                j1 *= scale
    norm += b
    return b / norm, j1 / norm


# (2 nu + 1) pi / 4 as an unevaluated sum hi + lo, nu = 0, 1
_PHASE = {0.0: (0.7853981633974483, 3.061616997868383e-17),
          1.0: (2.356194490192345, 9.184850993605148e-17)}
_SPLITTER = 134217729.0  # 2^27 + 1


def _two_sum(a, b):
    """s + e == a + b exactly (Knuth)."""
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _split(a):
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def _two_prod(a, b):
    """p + e == a * b exactly (Dekker)."""
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _hankel(x, nu, x_lo=None):
    mu = 4.0 * nu * nu
    p = np.ones_like(x)
    q = np.zeros_like(x)
    a = 1.0
    xk = np.ones_like(x)
    for k in range(1, _N_ASYMPTOTIC):
        a *= (mu - (2 * k - 1) ** 2) / (8.0 * k)
        xk = xk * x
        term = a / xk
        if k % 2 == 0:
            p += (-1) ** (k // 2) * term
        else:
            q += (-1) ** ((k - 1) // 2) * term
    # the phase x - (2 nu + 1) pi / 4 is formed in double-double: a plain
    # subtraction loses up to ulp(x)/2 of phase, i.e. ~1e-15 in J at x ~ 1e3
    c_hi, c_lo = _PHASE[nu]
    chi, err = _two_sum(x, -c_hi)
    err = err - c_lo
    if x_lo is not None:
        err = err + x_lo
    c, sn = np.cos(chi), np.sin(chi)
    cos_chi = c - sn * err
    sin_chi = sn + c * err
    return np.sqrt(2.0 / (math.pi * x)) * (p * cos_chi - q * sin_chi)


def _j0_j1(x, x_lo=None):
    """J0 and J1 at x (+ x_lo, a sub-ulp remainder of the argument)."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("Bessel evaluation is defined here for x >= 0 only")
    flat = x.ravel()
    lo_part = None if x_lo is None else np.broadcast_to(x_lo, x.shape).ravel()
    j0 = np.empty_like(flat)
    j1 = np.empty_like(flat)
    lo = flat <= SERIES_MAX
    hi = flat >= ASYMPTOTIC_MIN
    mid = ~(lo | hi)
    if np.any(lo):
        j0[lo], j1[lo] = _series(flat[lo])
    if np.any(mid):
        j0[mid], j1[mid] = _miller(flat[mid])
    if lo_part is not None:
        # first-order Taylor step for the remainder: J0' = -J1, J1' = J0 - J1/x
        low = ~hi
        d = lo_part[low]
        a, b = j0[low], j1[low]
        xs = flat[low]
        safe = np.where(xs > 0, xs, 1.0)
        j0[low] = a - b * d
        j1[low] = b + np.where(xs > 0, a - b / safe, 0.5) * d
    if np.any(hi):
        extra = None if lo_part is None else lo_part[hi]
        j0[hi] = _hankel(flat[hi], 0.0, extra)
        j1[hi] = _hankel(flat[hi], 1.0, extra)
    return j0.reshape(x.shape), j1.reshape(x.shape)


def j0(x):
    """Bessel function J0 for x >= 0 (scalar or array), absolute error ~1e-14."""
    v = _j0_j1(x)[0]
    return float(v) if np.ndim(v) == 0 else v


def j1(x):
    v = _j0_j1(x)[1]
    return float(v) if np.ndim(v) == 0 else v


def j0_prime(x):
    """J0'(x) = -J1(x)."""
    v = -_j0_j1(x)[1]
    return float(v) if np.ndim(v) == 0 else v


def zero_asymptote(n):
    beta = np.pi * (np.asarray(n, dtype=float) - 0.25)
    return beta + 1.0 / (8.0 * beta)


def bessel_zeros(n_max: int) -> np.ndarray:
    """First ``n_max`` positive zeros of J0.

    Seeds from pi(n - 1/4) + 1/(8 pi(n - 1/4)) and refines by Newton with a
    bisection fallback inside the bracket seed +- pi/4 ([2, 3] for n = 1).
    """
    if n_max < 1:
        raise ValueError("n_max must be a positive integer")
    n = np.arange(1, n_max + 1, dtype=float)
    seed = zero_asymptote(n)
    lo = seed - math.pi / 4
    hi = seed + math.pi / 4
    lo[0], hi[0] = 2.0, 3.0
    f_lo = j0(lo)
    f_hi = j0(hi)
    bad = np.sign(f_lo) == np.sign(f_hi)
    if np.any(bad):
        raise ZeroFindingError(f"no sign change in bracket for n = {int(n[bad][0])}")

    x = seed.copy()
    for _ in range(60):
        f, g = _j0_j1(x)
        # J0' = -J1
        step = f / g
        x_new = x + step
        # shrink bracket around the sign change before proposing the next point
        same_lo = np.sign(f) == np.sign(f_lo)
        lo = np.where(same_lo, x, lo)
        hi = np.where(same_lo, hi, x)
        f_lo = np.where(same_lo, f, f_lo)
        outside = (x_new <= lo) | (x_new >= hi) | ~np.isfinite(x_new)
        x_new = np.where(outside, 0.5 * (lo + hi), x_new)
        done = np.abs(x_new - x) <= 1e-15 * x_new
        x = x_new
        if np.all(done):
            break

    f = j0(x)
    eps = 1e-9 * x
    left, right = j0(x - eps), j0(x + eps)
    if np.any(np.sign(left) == np.sign(right)) or np.any((x < seed - math.pi / 4) & (n > 1)):
        raise ZeroFindingError("zero refinement failed the sign-change check")
    if np.any(np.abs(f) > 1e-10):
        raise ZeroFindingError("zero refinement did not converge")
    return x


def zero_remainders(zeros) -> np.ndarray:
    """One Newton step J0(z)/J1(z) from each double zero: z + remainder is the
    zero to roughly twice working precision."""
    a, b = _j0_j1(np.asarray(zeros, dtype=float))
    return a / b


def zero(n: int) -> float:
    """The n-th positive zero z_n of J0 (n >= 1)."""
    if n < 1:
        raise ValueError("zero index must be >= 1")
    return float(bessel_zeros(n)[-1])


def _fast_two_sum(a, b):
    s = a + b
    return s, b - (s - a)


def _dd_mul(ah, al, bh, bl):
    p, e = _two_prod(ah, bh)
    return _fast_two_sum(p, e + (ah * bl + al * bh))


def _dd_mul_d(ah, al, b):
    p, e = _two_prod(ah, b)
    return _fast_two_sum(p, e + al * b)


def _legendre_dd(xh, xl, order):
    """P_order and P_{order-1} at xh + xl by the three-term recurrence in double-double."""
    p0h, p0l = np.ones_like(xh), np.zeros_like(xh)
    p1h, p1l = xh.copy(), xl.copy()
    for k in range(2, order + 1):
        ah, al = _dd_mul(xh, xl, p1h, p1l)
        ah, al = _dd_mul_d(ah, al, 2.0 * k - 1.0)
        bh, bl = _dd_mul_d(p0h, p0l, k - 1.0)
        sh, se = _two_sum(ah, -bh)
        ch, cl = _fast_two_sum(sh, se + (al - bl))
        q = ch / k
        ph, pe = _two_prod(q, float(k))
        r = ((ch - ph) - pe + cl) / k
        p0h, p0l = p1h, p1l
        p1h, p1l = _fast_two_sum(q, r)
    return p1h, p1l, p0h, p0l


@lru_cache(maxsize=16)
def _legendre_nodes(order: int):
    """Gauss-Legendre nodes t + t_lo and weights on [-1, 1].

    numpy's nodes are polished by one Newton step in double-double and the
    weights 2 (1 - t^2) / (order P_{order-1}(t))^2 evaluated the same way;
    plain double weights carry relative errors up to 1e-9 near the ends at
    order ~1e3, which the derivative Gram matrix (entries ~z^2) exposes.
    """
    t, w = np.polynomial.legendre.leggauss(order)
    t_lo = np.zeros_like(t)
    if order < 2:
        return t, t_lo, w
    ph, pl, qh, ql = _legendre_dd(t, t_lo, order)
    P, Q = ph + pl, qh + ql
    dP = order * (t * P - Q) / (t * t - 1.0)
    t, t_lo = _two_sum(t, -P / dP)
    _, _, qh, ql = _legendre_dd(t, t_lo, order)
    ah, al = _two_sum(1.0, -t)
    bh, bl = _two_sum(1.0, t)
    mh, ml = _dd_mul(ah, al - t_lo, bh, bl + t_lo)
    sh, sl = _dd_mul(qh, ql, qh, ql)
    w = 2.0 * mh / (order * order * sh) * (1.0 + ml / mh - sl / sh)
    for a in (t, t_lo, w):
        a.setflags(write=False)
    return t, t_lo, w


def _radial_nodes(order: int):
    t, t_lo, w = _legendre_nodes(order)
    s, e = _two_sum(t, 1.0)
    r = 0.5 * s
    return r, 0.5 * (e + t_lo), 0.5 * w * r


def radial_quadrature(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes on (0, 1) with the weight r folded into the weights."""
    r, _, w = _radial_nodes(order)
    return r, w


@dataclass(frozen=True, eq=False)
class BesselBasis:
    n_modes: int
    zeros: np.ndarray
    norms: np.ndarray
    quad_nodes: np.ndarray
    quad_weights: np.ndarray
    eigen_values: np.ndarray
    eigen_deriv_values: np.ndarray
    basis_id: str = field(default="")

    @property
    def quad_order(self) -> int:
        return int(self.quad_nodes.size)

    def evaluate(self, r, deriv: bool = False) -> np.ndarray:
        """e_n(r) (or e_n'(r)) for all modes at arbitrary radii; shape (N, len(r))."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        f0, f1 = _j0_j1(*_products(self.zeros, r))
        if deriv:
            return -self.zeros[:, None] * f1 / self.norms[:, None]
        return f0 / self.norms[:, None]

    def gram(self, deriv: bool = False) -> np.ndarray:
        E = self.eigen_deriv_values if deriv else self.eigen_values
        return (E * self.quad_weights) @ E.T

    def to_bytes(self) -> bytes:
        head = BASIS_MAGIC + struct.pack("<III", BASIS_VERSION, self.n_modes, self.quad_order)
        body = b"".join(
            np.ascontiguousarray(a, dtype="<f8").tobytes()
            for a in (self.zeros, self.norms, self.quad_nodes, self.quad_weights,
                      self.eigen_values, self.eigen_deriv_values)
        )
        return head + body


def _hash_payload(zeros, norms, nodes, weights) -> str:
    h = hashlib.sha256()
    for a in (zeros, norms, nodes, weights):
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def _products(z, r, r_lo=0.0):
    """z_n r_k in double-double, with z_n carried to twice working precision.

    Rounding z_n to a double leaves J0(z_n) ~ 1e-15 instead of 0, and the
    derivative Gram matrix amplifies that boundary leak by ~z^3; the same
    holds for the rounding of the products z_n r_k.
    """
    z_lo = zero_remainders(z)
    zz = np.broadcast_to(z[:, None], (z.size, np.size(r)))
    x, e = _two_prod(zz, np.broadcast_to(r, zz.shape))
    return x, e + z[:, None] * r_lo + z_lo[:, None] * r


def default_quad_order(n_modes: int) -> int:
    return max(4 * n_modes, 2 * n_modes + 16)


def build_basis(n_modes: int, quad_order: int | None = None) -> BesselBasis:
    """Orthonormal radial eigenbasis e_n = J0(z_n r) / nu_n on a Gauss grid.

    ``quad_order`` defaults to max(4 * n_modes, 2 * n_modes + 16). Orders
    below n_modes are rejected; orders below 2 * n_modes only warn, since
    products of basis functions are then under-resolved. The quadrature norms
    are checked against nu_n^2 = J1(z_n)^2 / 2 once the grid is resolved
    (K >= 2N + 16; for small N the bound K >= 2N alone is not enough).
    """
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    if quad_order is None:
        quad_order = default_quad_order(n_modes)
    if quad_order < n_modes:
        raise ValueError(f"quad_order={quad_order} < n_modes={n_modes}")
    if quad_order < 2 * n_modes:
        warnings.warn(f"quad_order={quad_order} < 2*n_modes; Gram matrix will not be exact",
                      ResolutionWarning, stacklevel=2)

    z = bessel_zeros(n_modes)
    r, r_lo, w = _radial_nodes(quad_order)
    J0, J1 = _j0_j1(*_products(z, r, r_lo))
    norms = np.sqrt((J0 * J0) @ w)
    closed = np.abs(j1(z)) / math.sqrt(2.0)
    err = np.max(np.abs(norms**2 - closed**2))
    if err > 1e-10:
        msg = f"quadrature norm disagrees with J1(z)^2/2 by {err:.2e}"
        if quad_order >= 2 * n_modes + 16:
            raise RuntimeError(msg)
        warnings.warn(msg, ResolutionWarning, stacklevel=2)
    E = J0 / norms[:, None]
    dE = -z[:, None] * J1 / norms[:, None]
    for a in (z, norms, r, w, E, dE):
        a.setflags(write=False)
    return BesselBasis(n_modes, z, norms, r, w, E, dE, _hash_payload(z, norms, r, w))


def save_basis(basis: BesselBasis, path) -> None:
    Path(path).write_bytes(basis.to_bytes())


def load_basis(path) -> BesselBasis:
    data = Path(path).read_bytes()
    if data[:8] != BASIS_MAGIC:
        raise ValueError(f"{path}: not a basis file")
    version, n, k = struct.unpack("<III", data[8:20])
    if version != BASIS_VERSION:
        raise ValueError(f"{path}: unsupported basis file version {version}")
    flat = np.frombuffer(data[20:], dtype="<f8")
    sizes = [n, n, k, k, n * k, n * k]
    if flat.size != sum(sizes):
        raise ValueError(f"{path}: truncated basis file")
    parts = np.split(flat, np.cumsum(sizes)[:-1])
    z, norms, r, w, E, dE = (p.astype(float) for p in parts)
    E = E.reshape(n, k)
    dE = dE.reshape(n, k)
    for a in (z, norms, r, w, E, dE):
        a.setflags(write=False)
    return BesselBasis(n, z, norms, r, w, E, dE, _hash_payload(z, norms, r, w))


def cached_basis(n_modes: int, quad_order: int | None = None, cache_dir=None) -> BesselBasis:
    """build_basis, reusing a file in ``cache_dir`` when present."""
    if cache_dir is None:
        return build_basis(n_modes, quad_order)
    quad_order = quad_order or default_quad_order(n_modes)
    path = Path(cache_dir) / f"basis_N{n_modes}_K{quad_order}.gdb"
    if path.exists():
        return load_basis(path)
    basis = build_basis(n_modes, quad_order)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_basis(basis, path)
    return basis


def _check_mode(basis: BesselBasis, n: int) -> int:
    if not 1 <= n <= basis.n_modes:
        raise IndexError(f"mode index {n} outside 1..{basis.n_modes}")
    return n - 1


def eigen_lp_norm(basis: BesselBasis, n: int, p: float) -> float:
    """(int_0^1 |e_n|^p r dr)^(1/p); p = inf gives the sup norm, attained at r = 0."""
    i = _check_mode(basis, n)
    if p < 2:
        raise ValueError("p must be >= 2")
    if basis.quad_order < 4 * basis.zeros[i] / math.pi:
        warnings.warn(f"grid of {basis.quad_order} nodes under-resolves e_{n}",
                      ResolutionWarning, stacklevel=2)
    row = np.abs(basis.eigen_values[i])
    if math.isinf(p):
        return float(max(row.max(), 1.0 / basis.norms[i]))
    return float((row**p @ basis.quad_weights) ** (1.0 / p))


def deriv_norm_ratio(basis: BesselBasis, n: int) -> float:
    """||e_n'|| / z_n. Identically 1 in exact arithmetic, since ||e_n'||^2 = z_n^2."""
    i = _check_mode(basis, n)
    d = basis.eigen_deriv_values[i]
    return float(math.sqrt(d * d @ basis.quad_weights) / basis.zeros[i])
