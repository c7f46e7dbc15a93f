"""Analysis/synthesis between nodal values on the radial grid and Fourier-Bessel coefficients.

Dense matrix products against the tabulated eigenfunctions; every function
accepts a leading batch dimension on the raw-array paths.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bessel import BesselBasis


@dataclass(frozen=True)
class NodalField:
    values: np.ndarray
    grid_id: str


def _coeff_matrix(basis: BesselBasis, coeffs) -> tuple[np.ndarray, int]:
    c = np.asarray(coeffs)
    n = c.shape[-1]
    if n > basis.n_modes:
        raise ValueError(f"{n} coefficients for a basis of {basis.n_modes} modes")
    return c, n


def project(basis: BesselBasis, values) -> np.ndarray:
    """a_n = sum_k w_k values[..., k] e_n(r_k) for raw nodal arrays (batched)."""
    return np.asarray(values) @ (basis.eigen_values * basis.quad_weights).T


def expand(basis: BesselBasis, coeffs, deriv: bool = False) -> np.ndarray:
    """Nodal values sum_n coeffs[..., n] e_n(r_k) for raw coefficient arrays (batched)."""
    c, n = _coeff_matrix(basis, coeffs)
    E = basis.eigen_deriv_values if deriv else basis.eigen_values
    return c @ E[:n]


def analyze(basis: BesselBasis, field: NodalField) -> np.ndarray:
    """Fourier-Bessel coefficients <f, e_n> of a field sampled on the basis grid."""
    if field.grid_id != basis.basis_id or np.shape(field.values)[-1] != basis.quad_order:
        raise ValueError("field was not sampled on this basis grid")
    return project(basis, field.values)


def synthesize(basis: BesselBasis, coeffs) -> NodalField:
    return NodalField(expand(basis, coeffs), basis.basis_id)


def synthesize_deriv(basis: BesselBasis, coeffs) -> NodalField:
    """Radial derivative sum_n coeffs[n] e_n'(r_k) on the grid."""
    return NodalField(expand(basis, coeffs, deriv=True), basis.basis_id)


def sample_field(basis: BesselBasis, func) -> NodalField:
    """Evaluate ``func(r)`` on the basis grid."""
    return NodalField(np.asarray(func(basis.quad_nodes)), basis.basis_id)


def inner(basis: BesselBasis, f: NodalField, g: NodalField) -> complex:
    """Discrete int_0^1 f conj(g) r dr."""
    return complex(np.sum(basis.quad_weights * f.values * np.conj(g.values)))
