"""Discrete p-Dirichlet energy, L^p norms and the p-Laplacian.

Differences are taken across every face of the grid that touches an active
cell, reading inactive neighbours as zero.  With

    E(u) = h^dim * sum_faces |(u_up - u_low) / h|^p

the p-Laplacian returned by :func:`p_laplacian` is exactly the gradient of
``E/p`` with respect to the cell values, divided by ``h^dim``, so the discrete
weak form ``h^dim <p_laplacian(u), phi> = d/ds (E(u + s phi)/p)`` holds to
rounding.

Array kernels (``*_of``) operate on raw value vectors and are what the solvers
call in their inner loops; the Field-level functions wrap them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Field, GridDomain


class ZeroFieldError(ValueError):
    pass


@dataclass(frozen=True)
class Exponent:
    p: float

    def __post_init__(self):
        if not (1.0 < float(self.p) < np.inf):
            raise ValueError(f"exponent must satisfy 1 < p < inf, got {self.p}")

    @property
    def conjugate(self) -> float:
        return self.p / (self.p - 1.0)

    def __float__(self):
        return float(self.p)


def as_p(p) -> float:
    """Validate an exponent given as float or :class:`Exponent`."""
    return float(Exponent(float(p)).p)


def conjugate(p) -> float:
    p = as_p(p)
    return p / (p - 1.0)


def spow(x, q: float) -> np.ndarray:
    """Signed power ``|x|^q sign(x)`` (zero at zero for any q > 0)."""
    x = np.asarray(x, dtype=float)
    return np.abs(x) ** q * np.sign(x)


def duality_map(x, p: float) -> np.ndarray:
    """``|x|^(p-2) x``, the derivative of ``|x|^p / p``."""
    return spow(x, p - 1.0)


# -- array kernels ---------------------------------------------------------------


def gradient_of(domain: GridDomain, x: np.ndarray) -> np.ndarray:
    return domain.difference_matrix @ x


def energy_of(domain: GridDomain, x: np.ndarray, p: float) -> float:
    g = domain.difference_matrix @ x
    return domain.cell_volume * float(np.sum(np.abs(g) ** p))


def power_sum_of(domain: GridDomain, x: np.ndarray, p: float) -> float:
    """``||x||_p^p`` including the cell volume."""
    return domain.cell_volume * float(np.sum(np.abs(x) ** p))


def norm_of(domain: GridDomain, x: np.ndarray, p: float) -> float:
    return power_sum_of(domain, x, p) ** (1.0 / p)


def plap_of(domain: GridDomain, x: np.ndarray, p: float) -> np.ndarray:
    D = domain.difference_matrix
    return D.T @ duality_map(D @ x, p)


def dual_norm_of(domain: GridDomain, r: np.ndarray, p: float) -> float:
    """l^{p'} norm of a residual vector, weighted by the cell volume."""
    q = p / (p - 1.0)
    return norm_of(domain, r, q)


def residual_of(domain: GridDomain, x: np.ndarray, lam: float, p: float) -> float:
    r = plap_of(domain, x, p) - lam * duality_map(x, p)
    return dual_norm_of(domain, r, p)


# -- field-level API ---------------------------------------------------------------


def gradient(u: Field) -> np.ndarray:
    """Face differences ``(u_upper - u_lower)/h`` in the domain's face order.

    Faces are listed axis by axis (see :attr:`GridDomain.faces`); ghost cells
    outside the mask read as zero.
    """
    return gradient_of(u.domain, u.values)


def dirichlet_energy(u: Field, p) -> float:
    return energy_of(u.domain, u.values, as_p(p))


def lp_norm(u: Field, p) -> float:
    return norm_of(u.domain, u.values, as_p(p))


def normalize(u: Field, p) -> Field:
    n = lp_norm(u, p)
    if n == 0.0:
        raise ZeroFieldError("cannot normalize zero")
    return Field(u.domain, u.values / n)


def rayleigh(u: Field, p) -> float:
    """``E(u) / ||u||_p^p``; invariant under nonzero scaling."""
    p = as_p(p)
    den = power_sum_of(u.domain, u.values, p)
    if den == 0.0:
        raise ZeroFieldError("Rayleigh quotient of the zero field")
    return energy_of(u.domain, u.values, p) / den


def p_laplacian(u: Field, p) -> Field:
    return Field(u.domain, plap_of(u.domain, u.values, as_p(p)))


def eigen_residual(u: Field, lam: float, p) -> float:
    """Dual-norm surrogate of ``-Delta_p u - lam |u|^(p-2) u``.

    Measured as the volume-weighted l^{p'} norm of the cell residual; zero
    exactly on discrete eigenpairs.
    """
    return residual_of(u.domain, u.values, float(lam), as_p(p))


# -- pointwise inequalities used as property checks ------------------------------


def monotonicity_gap(xi, eta, p) -> np.ndarray:
    """``(|xi|^(p-2) xi - |eta|^(p-2) eta) . (xi - eta)`` for stacked vectors.

    ``xi`` and ``eta`` have shape ``(..., n)``; the dot product is over the
    last axis.
    """
    p = as_p(p)
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    nx = np.linalg.norm(xi, axis=-1, keepdims=True)
    ne = np.linalg.norm(eta, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        ax = np.where(nx > 0, nx ** (p - 2.0), 0.0) * xi
        ae = np.where(ne > 0, ne ** (p - 2.0), 0.0) * eta
    return np.sum((ax - ae) * (xi - eta), axis=-1)


def monotonicity_lower_bound(xi, eta, p) -> np.ndarray:
    """Right-hand side of the strong monotonicity inequality.

    ``2^(2-p) |xi-eta|^p`` for p >= 2 and
    ``(p-1) |xi-eta|^2 (|xi|+|eta|)^(p-2)`` for 1 < p < 2.
    """
    p = as_p(p)
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    d = np.linalg.norm(xi - eta, axis=-1)
    if p >= 2.0:
        return 2.0 ** (2.0 - p) * d**p
    s = np.linalg.norm(xi, axis=-1) + np.linalg.norm(eta, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(s > 0, (p - 1.0) * d**2 * s ** (p - 2.0), 0.0)


def picone_integrand(u: Field, v: Field, p, eps: float = 1e-3) -> np.ndarray:
    """Per-face Picone integrand for nonnegative ``u``, ``v``.

    ``|a|^p + (p-1) s^p |b|^p - p s^(p-1) |b|^(p-2) b a`` with ``a``, ``b`` the
    face differences of ``u``, ``v`` and ``s = u/(v+eps)`` evaluated at the
    face (mean of the two adjacent cells, ghosts reading zero).
    """
    p = as_p(p)
    dom = u.domain
    lower, upper = dom.faces
    uv = np.append(u.values, 0.0)
    vv = np.append(v.values, 0.0)
    uf = 0.5 * (uv[lower] + uv[upper])
    vf = 0.5 * (vv[lower] + vv[upper])
    a = gradient(u)
    b = gradient(v)
    s = uf / (vf + eps)
    return np.abs(a) ** p + (p - 1.0) * s**p * np.abs(b) ** p - p * s ** (p - 1.0) * duality_map(b, p) * a
