"""First and second Dirichlet eigenvalues of the discrete p-Laplacian on grid masks."""

from .calculus import (
    Exponent,
    ZeroFieldError,
    dirichlet_energy,
    eigen_residual,
    gradient,
    lp_norm,
    normalize,
    p_laplacian,
    rayleigh,
)
from .grid import EmptyDomainError, Field, GridDomain, components, measure, restrict
from .solver import ConvergenceError, ResolventOptions, resolvent, torsion
from .spectrum import EigenOptions, EigenPair, SpectralReport, is_simple, lambda1, lambda2, per_component_lambda1

__version__ = "0.1.0"
