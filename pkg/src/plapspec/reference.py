"""Independent reference values.

Nothing here calls the solver modules.  The p = 2 stencil is assembled
directly from the mask and diagonalized densely, and the 1D values come from
closed forms, so these numbers can be used to check the solvers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.ndimage import label

from .grid import GridDomain

STENCIL_CAP = 4096


@dataclass(frozen=True)
class OracleValue:
    value: float
    method: str  # "closed-form", "dense-eigensolve" or "quadrature"
    error_bound: float

    def __post_init__(self):
        if not self.error_bound > 0:
            raise ValueError("error bound must be positive")

    def __float__(self):
        return float(self.value)


def _check_p(p) -> float:
    p = float(p)
    if not 1.0 < p < np.inf:
        raise ValueError(f"exponent must satisfy 1 < p < inf, got {p}")
    return p


def pi_p_closed(p) -> float:
    """``2 pi / (p sin(pi/p))``."""
    p = _check_p(p)
    return 2.0 * np.pi / (p * np.sin(np.pi / p))


def pi_p(p) -> OracleValue:
    """``2 * int_0^1 (1 - s^p)^(-1/p) ds`` by adaptive quadrature.

    The endpoint singularity is handed to QUADPACK's algebraic weight:
    ``(1 - s^p)^(-1/p) = g(s) (1 - s)^(-1/p)`` with ``g`` smooth on [0, 1].
    """
    p = _check_p(p)

    def g(s):
        if s >= 1.0:
            return p ** (-1.0 / p)
        return ((1.0 - s**p) / (1.0 - s)) ** (-1.0 / p)

    val, err, *_ = integrate.quad(g, 0.0, 1.0, weight="alg", wvar=(0.0, -1.0 / p), epsabs=1e-13, epsrel=1e-13, full_output=1)
    if not np.isfinite(val) or err > 1e-10:
        raise ArithmeticError(f"quadrature for pi_p did not converge (error estimate {err:.2e})")
    return OracleValue(2.0 * val, "quadrature", max(2.0 * err, 1e-14))


def interval_eigs(L: float, p, k: int = 1) -> OracleValue:
    """``lambda_k = (p-1) (k pi_p / L)^p`` on an interval of length ``L``."""
    p = _check_p(p)
    if not L > 0:
        raise ValueError("interval length must be positive")
    if k not in (1, 2):
        raise ValueError("only k = 1, 2 are provided")
    val = (p - 1.0) * (k * pi_p_closed(p) / L) ** p
    return OracleValue(val, "closed-form", 1e-12 * val)


def interval_stencil_eig(n: int, k: int = 1, h: float | None = None) -> OracleValue:
    """``k``-th eigenvalue of the 3-point stencil on ``n`` cells in a row.

    ``(4/h^2) sin^2(k pi / (2 (n+1)))``; with the default ``h = 1/(n+1)`` the
    row models the unit interval.
    """
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    h = 1.0 / (n + 1) if h is None else h
    val = 4.0 / h**2 * np.sin(k * np.pi / (2.0 * (n + 1))) ** 2
    return OracleValue(val, "closed-form", 1e-13 * val)


def stencil_matrix_dense(mask, h: float) -> np.ndarray:
    """Dense 3-point (1D) or 5-point (2D) Dirichlet stencil on the mask."""
    m = np.asarray(mask, dtype=bool)
    idx = np.full(m.shape, -1, dtype=np.int64)
    cells = np.argwhere(m)
    idx[m] = np.arange(len(cells))
    n = len(cells)
    A = np.zeros((n, n))
    A[np.arange(n), np.arange(n)] = 2.0 * m.ndim
    for ax in range(m.ndim):
        for step in (-1, 1):
            nb = cells.copy()
            nb[:, ax] += step
            ok = (nb[:, ax] >= 0) & (nb[:, ax] < m.shape[ax])
            rows = np.nonzero(ok)[0]
            cols = idx[tuple(nb[ok].T)]
            keep = cols >= 0
            A[rows[keep], cols[keep]] = -1.0
    return A / h**2


def stencil_eigs_p2(domain: GridDomain, k: int = 1) -> OracleValue:
    """``k``-th smallest eigenvalue of the p = 2 stencil by dense eigensolve."""
    n = int(np.count_nonzero(domain.mask))
    if n > STENCIL_CAP:
        raise ValueError(f"{n} active cells exceed the dense oracle cap of {STENCIL_CAP}")
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    w = np.linalg.eigvalsh(stencil_matrix_dense(domain.mask, domain.h))
    return OracleValue(float(w[k - 1]), "dense-eigensolve", 1e-10 * max(1.0, abs(w[k - 1])))


# -- parametric mask families for the shape-optimization checks --------------------


def digital_disk(shape, cells: int, center) -> np.ndarray:
    """The ``cells`` grid cells nearest to ``center`` (ties by raster order)."""
    grids = np.indices(shape)
    d2 = sum((g - c) ** 2 for g, c in zip(grids, center)).ravel()
    order = np.argsort(d2, kind="stable")[:cells]
    m = np.zeros(int(np.prod(shape)), dtype=bool)
    m[order] = True
    return m.reshape(shape)


def disk_sweep(shape, cells: int, h: float, offsets=(0.0, 0.25, 0.5)) -> OracleValue:
    """Smallest p = 2 first eigenvalue over centred digital disks of ``cells`` cells.

    Sub-cell shifts of the centre produce the different digital disks.
    """
    best = np.inf
    for dx in offsets:
        for dy in offsets:
            c = (shape[0] / 2 - 0.5 + dx, shape[1] / 2 - 0.5 + dy)
            m = digital_disk(shape, cells, c)
            best = min(best, stencil_eigs_p2(GridDomain(m, h), 1).value)
    return OracleValue(best, "dense-eigensolve", 1e-10 * best)


def two_disk_sweep(shape, cells: int, h: float, offsets=(0.0, 0.25, 0.5), gaps=(1,)) -> OracleValue:
    """Smallest p = 2 second eigenvalue over unions of two equal digital disks.

    The disks have ``cells // 2`` and ``cells - cells // 2`` cells and sit
    side by side along the long axis of the box, separated by ``gap`` empty
    columns at their closest point.
    """
    a = cells // 2
    b = cells - a
    rows, cols = shape
    best = np.inf
    for dx in offsets:
        for dy in offsets:
            for gap in gaps:
                left = digital_disk((rows, cols), a, (rows / 2 - 0.5 + dy, cols / 4 - 0.5 + dx))
                width = np.nonzero(left.any(axis=0))[0]
                shift = width.max() + 1 + gap - width.min()
                right = np.zeros_like(left)
                if width.min() + shift + (width.max() - width.min()) >= cols:
                    continue
                right[:, shift:] = left[:, : cols - shift]
                if b != a:
                    right = digital_disk((rows, cols), b, (rows / 2 - 0.5 + dy, cols / 4 - 0.5 + dx + shift))
                m = left | right
                if m.sum() != cells or label(m)[1] != 2:
                    continue
                best = min(best, stencil_eigs_p2(GridDomain(m, h), 2).value)
    if not np.isfinite(best):
        raise ValueError("no admissible two-disk configuration fits in the box")
    return OracleValue(best, "dense-eigensolve", 1e-10 * best)
