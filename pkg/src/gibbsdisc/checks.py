"""Bilinear eigenfunction bounds, the eigenvalue-window counting set and
representation counts of l = (4 n1 - 1)^2 + (4 n2 - 1)^2.

Growth exponents are fitted over the tested range; they are regression
values, not proofs of the asymptotic bounds.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .bessel import BesselBasis, ResolutionWarning, bessel_zeros


def _row(basis: BesselBasis, n: int, deriv: bool = False) -> np.ndarray:
    if not 1 <= n <= basis.n_modes:
        raise IndexError(f"mode index {n} outside 1..{basis.n_modes}")
    E = basis.eigen_deriv_values if deriv else basis.eigen_values
    return E[n - 1]


def _check_resolution(basis: BesselBasis, n1: int, n2: int) -> None:
    need = 2.0 * (basis.zeros[n1 - 1] + basis.zeros[n2 - 1]) / math.pi
    if basis.quad_order < need:
        warnings.warn(f"grid of {basis.quad_order} nodes under-resolves e_{n1} e_{n2}",
                      ResolutionWarning, stacklevel=3)


def bilinear_norm(basis: BesselBasis, n1: int, n2: int) -> float:
    """||e_{n1} e_{n2}||_{L^2} = (int e_{n1}^2 e_{n2}^2 r dr)^{1/2}."""
    a, b = _row(basis, n1), _row(basis, n2)
    _check_resolution(basis, n1, n2)
    p = a * b  # one product first, so swapping n1 and n2 is bitwise symmetric
    return float(math.sqrt((p * p) @ basis.quad_weights))


def bilinear_deriv_norm(basis: BesselBasis, n1: int, n2: int) -> float:
    """||e_{n1} e'_{n2}|| / ||e'_{n2}||."""
    a, d = _row(basis, n1), _row(basis, n2, deriv=True)
    _check_resolution(basis, n1, n2)
    w = basis.quad_weights
    return float(math.sqrt((a * a * d * d) @ w) / math.sqrt((d * d) @ w))


def fit_exponent(x, y) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def _is_pow2(v: int) -> bool:
    return v >= 1 and not v & (v - 1)


@dataclass(frozen=True)
class CountingQuery:
    tau: float
    L1: int
    L2: int
    N1: int
    N2: int

    def __post_init__(self):
        for name in ("L1", "L2", "N1", "N2"):
            if not _is_pow2(int(getattr(self, name))):
                raise ValueError(f"{name} must be a power of two >= 1")
        if max(self.N1, self.N2) > 4096:
            raise ValueError("N1, N2 <= 4096 (enumeration budget)")

    @property
    def half_width(self) -> float:
        """|tau + z1^2 + z2^2| <= half_width is the window condition."""
        return 2.0 * (self.L1 + self.L2) - 1.0


@lru_cache(maxsize=None)
def _zeros_upto(bound: float) -> np.ndarray:
    n = int(bound / math.pi + 2)
    z = bessel_zeros(n)
    while z[-1] <= bound:
        n *= 2
        z = bessel_zeros(n)
    return z


def block_zeros(N: int) -> np.ndarray:
    """z_n with 1 + z_n in the closed block [N, 2N]."""
    z = _zeros_upto(2.0 * N)
    br = 1.0 + z
    return z[(br >= N) & (br <= 2 * N)]


def count_lambda_tilde(query: CountingQuery) -> int:
    """#{(n1, n2): 1 + z_{n_i} in [N_i, 2N_i], 1 + |tau + z_{n1}^2 + z_{n2}^2| <= 2(L1 + L2)}."""
    a = block_zeros(query.N1) ** 2
    b = np.sort(block_zeros(query.N2) ** 2)
    h = query.half_width
    lo = np.searchsorted(b, -query.tau - a - h, side="left")
    hi = np.searchsorted(b, -query.tau - a + h, side="right")
    return int(np.sum(hi - lo))


def tau_sweep(N1: int, N2: int, L1: int, L2: int, taus) -> np.ndarray:
    return np.array([count_lambda_tilde(CountingQuery(float(t), L1, L2, N1, N2)) for t in taus])


def max_count_over_tau(N1: int, N2: int, L1: int, L2: int) -> tuple[int, float]:
    """Exact sup over tau of |Lambda~| and a tau attaining it.

    The count is the number of pair sums z1^2 + z2^2 inside a window of
    width 2 * half_width, so the sup is a sliding-window maximum.
    """
    q = CountingQuery(0.0, L1, L2, N1, N2)
    a = block_zeros(N1) ** 2
    b = block_zeros(N2) ** 2
    sums = np.sort(np.add.outer(a, b).ravel())
    h = q.half_width
    hi = np.searchsorted(sums, sums + 2 * h, side="right")
    counts = hi - np.arange(sums.size)
    i = int(np.argmax(counts))
    return int(counts[i]), float(-(sums[i] + h))


def representation_count(l: int, n_max: int) -> int:
    """#{(n1, n2) in [1, n_max]^2 : (4 n1 - 1)^2 + (4 n2 - 1)^2 = l}."""
    if n_max < 1 or l < 1:
        raise ValueError("l and n_max must be positive")
    if l > 2 * (4 * n_max - 1) ** 2:
        raise ValueError("l exceeds 2 (4 n_max - 1)^2")
    count = 0
    for n1 in range(1, n_max + 1):
        rest = l - (4 * n1 - 1) ** 2
        if rest <= 0:
            break
        r = math.isqrt(rest)
        if r * r == rest and r % 4 == 3 and r <= 4 * n_max - 1:
            count += 1
    return count


def representation_table(n_max: int) -> np.ndarray:
    """counts[l] = representation_count(l, n_max) for every l up to 2 (4 n_max - 1)^2."""
    sq = (4 * np.arange(1, n_max + 1, dtype=np.int64) - 1) ** 2
    return np.bincount(np.add.outer(sq, sq).ravel())


def running_max_representations(l_max: int) -> np.ndarray:
    """max_{l' <= l} representation_count(l', .) for l = 0 .. l_max."""
    n_max = (math.isqrt(l_max) + 1) // 4 + 1
    counts = representation_table(n_max)[: l_max + 1]
    return np.maximum.accumulate(counts)


# Fitted-exponent regression thresholds for the desk-scale checks.
THRESHOLDS = {
    "offdiag_slope": 0.05,
    "deriv_slope": 0.05,
    "diagonal_log_power": 0.6,
    "counting_exponent": 0.15,
    "representation_exponent": 0.1,
}


def bilinear_tables(basis: BesselBasis, n_min_diag: int = 16) -> dict:
    """Off-diagonal rows (n, ||e_1 e_n||, ||e_1 e_n'||/||e_n'||) for n in [2, N] and
    diagonal rows (n, ||e_n^2||) for n in [n_min_diag, N], with their fits."""
    n = np.arange(2, basis.n_modes + 1)
    off = np.array([bilinear_norm(basis, 1, int(k)) for k in n])
    der = np.array([bilinear_deriv_norm(basis, 1, int(k)) for k in n])
    d = np.arange(n_min_diag, basis.n_modes + 1)
    diag = np.array([bilinear_norm(basis, int(k), int(k)) for k in d])
    return {
        "offdiag": np.column_stack([n, off, der]),
        "diagonal": np.column_stack([d, diag]),
        "offdiag_slope": fit_exponent(n, off),
        "deriv_slope": fit_exponent(n, der),
        # power p in ||e_n^2|| ~ C (log n)^p
        "diagonal_log_power": fit_exponent(np.log(d), diag),
    }


def counting_table(Ns, L: int = 1) -> dict:
    """Rows (N, sup_tau |Lambda~|, sup/(L1+L2), maximizing tau) for N1 = N2 = N."""
    rows = []
    for N in Ns:
        count, tau = max_count_over_tau(int(N), int(N), L, L)
        rows.append((int(N), count, count / (2 * L), tau))
    rows = np.array(rows, dtype=float)
    return {"rows": rows, "counting_exponent": fit_exponent(rows[:, 0], rows[:, 2])}


def representation_growth(l_max: int, n_points: int = 41, l_min: int = 100) -> dict:
    """Running maximum of representation counts at log-spaced bounds in [l_min, l_max]."""
    running = running_max_representations(l_max)
    bounds = np.unique(np.geomspace(l_min, l_max, n_points).astype(np.int64))
    values = running[bounds]
    return {"rows": np.column_stack([bounds, values]),
            "representation_exponent": fit_exponent(bounds, values)}
