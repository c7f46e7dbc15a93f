"""Gauge-invariant sub-cubic nonlinearities F = dV/d(conj z).

Two families are supported:

* ``smooth_power``: F(z) = sign (1 + |z|^2)^(alpha/2) z,
  V(z) = sign 2/(alpha+2) [(1 + |z|^2)^((alpha+2)/2) - 1]
* ``pure_power``:   F(z) = sign |z|^alpha z,  V(z) = sign 2/(alpha+2) |z|^(alpha+2)

``sign`` is +1 (focusing, the default), -1, or 0 (no interaction; used to
isolate the linear flow and the cutoff in tests).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .bessel import BesselBasis
from .transform import NodalField

KINDS = ("smooth_power", "pure_power")


@dataclass(frozen=True)
class NonlinearitySpec:
    kind: str = "smooth_power"
    alpha: float = 1.0
    sign: int = 1
    normalize_at_zero: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}")
        if not 0 < self.alpha < 2:
            raise ValueError(f"alpha must lie in (0, 2), got {self.alpha}")
        if self.sign not in (-1, 0, 1):
            raise ValueError("sign must be -1, 0 or +1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NonlinearitySpec":
        return cls(**d)


def potential(spec: NonlinearitySpec, z, alpha: float | None = None):
    """V(z), vectorised over ``z``.

    ``alpha`` overrides ``spec.alpha`` without validation; oracles use it to
    reach the excluded endpoint alpha = 2.
    """
    a = spec.alpha if alpha is None else alpha
    m2 = np.abs(z) ** 2
    c = 2.0 / (a + 2.0)
    if spec.kind == "pure_power":
        v = m2 ** (0.5 * (a + 2.0))
    else:
        v = (1.0 + m2) ** (0.5 * (a + 2.0))
        if spec.normalize_at_zero:
            v = v - 1.0
    return spec.sign * c * v


def force(spec: NonlinearitySpec, z, alpha: float | None = None):
    """F(z) = dV/d(conj z)."""
    a = spec.alpha if alpha is None else alpha
    z = np.asarray(z)
    m2 = np.abs(z) ** 2
    if spec.kind == "pure_power":
        g = m2 ** (0.5 * a)
    else:
        g = (1.0 + m2) ** (0.5 * a)
    return spec.sign * g * z


def potential_integral(spec: NonlinearitySpec, basis: BesselBasis, field: NodalField,
                       alpha: float | None = None) -> float:
    """int_0^1 V(u(r)) r dr by the basis quadrature."""
    if field.grid_id != basis.basis_id:
        raise ValueError("field was not sampled on this basis grid")
    return float(potential(spec, field.values, alpha) @ basis.quad_weights)
