"""Radial Fourier-Bessel discretization of sub-cubic NLS on the unit disc,
with Gibbs-measure sampling and invariance checks for the truncated flow."""

__version__ = "0.1.0"

from .bessel import BesselBasis, bessel_zeros, build_basis, cached_basis, zero  # noqa: E402
from .flow import Dynamics, FlowConfig, evolve, integrate  # noqa: E402
from .measure import GibbsEnsemble, SpectralState, sample_ensemble, sample_mu  # noqa: E402
from .nonlinearity import NonlinearitySpec  # noqa: E402

__all__ = [
    "__version__", "BesselBasis", "bessel_zeros", "build_basis", "cached_basis", "zero",
    "Dynamics", "FlowConfig", "evolve", "integrate",
    "GibbsEnsemble", "SpectralState", "sample_ensemble", "sample_mu", "NonlinearitySpec",
]
