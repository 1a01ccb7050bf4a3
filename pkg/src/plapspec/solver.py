"""Resolvent of the discrete p-Laplacian and the torsion function.

The resolvent of ``f`` is the unique minimizer of the strictly convex
functional ``E(u)/p - h^dim <f, u>`` over fields on the mask.  It is found by
descent with backtracking; for p = 2 the minimizer solves a sparse linear
system and that direct solve is used as a fast path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .calculus import as_p, dual_norm_of, energy_of, plap_of
from ._descent import Preconditioner, _snap_flat
from .grid import Field, GridDomain

_EPS = np.finfo(float).eps


class ConvergenceError(RuntimeError):
    """Raised when an iterative solve misses its tolerance.

    ``residual`` is the last residual and ``result`` the last iterate, so
    callers can inspect or reuse partial output.
    """

    def __init__(self, message, residual=None, result=None, diagnostics=None):
        super().__init__(message)
        self.residual = residual
        self.result = result
        self.diagnostics = diagnostics or {}


@dataclass
class ResolventOptions:
    """Options for :func:`resolvent`.

    ``precondition`` switches between steps along ``-H^{-1}(grad)`` with the
    floored Hessian ``H`` (default) and plain gradient steps starting at
    ``initial_step`` (``h^2/4`` when left as None).  ``fast_path`` enables the
    direct sparse solve when p == 2.
    """

    max_iters: int = 200_000
    tol: float = 1e-8
    initial_step: float | None = None
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    precondition: bool = True
    fast_path: bool = True
    stall_iters: int = 500

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink factor must lie in (0, 1)")


def _objective(dom, x, f, p):
    return energy_of(dom, x, p) / p - dom.cell_volume * float(f @ x)


def resolvent(
    domain: GridDomain,
    f: Field,
    p,
    opts: ResolventOptions | None = None,
    initial: Field | None = None,
) -> Field:
    """Solve ``-Delta_p u = f`` on the mask with zero data outside it."""
    p = as_p(p)
    opts = opts or ResolventOptions()
    domain.require_nonempty()
    fv = f.values if f.domain is domain else f.on(domain).values
    if not np.any(fv) and initial is None:
        return Field.zeros(domain)
    if p == 2.0 and opts.fast_path:
        x = spla.spsolve(domain.stencil_matrix, fv)
        res = dual_norm_of(domain, plap_of(domain, x, p) - fv, p)
        if res > opts.tol:
            raise ConvergenceError(f"direct solve residual {res:.3e} above tol", res, Field(domain, x))
        return Field(domain, x)

    x = np.zeros(domain.n_active) if initial is None else initial.on(domain).values.copy()
    pre = Preconditioner(domain, p)
    J = _objective(domain, x, fv, p)
    step = opts.initial_step if opts.initial_step is not None else domain.h**2 / 4
    alpha = 1.0 if opts.precondition else step
    x_prev = g_prev = None
    res = np.inf
    best, since = np.inf, 0
    status = "max_iters"
    for it in range(opts.max_iters):
        g = plap_of(domain, x, p) - fv
        res = dual_norm_of(domain, g, p)
        if res <= opts.tol:
            return Field(domain, x)
        # a residual stuck at its rounding floor (faces with vanishing
        # gradient when p < 2) cannot improve further
        if res < best * (1.0 - 1e-3):
            best, since = res, 0
        else:
            since += 1
            if since >= opts.stall_iters:
                status = "stalled"
                break
        if opts.precondition:
            if not np.any(x):
                # zero start: the floored Hessian degenerates, take one scaled
                # stencil solve instead
                d = -spla.spsolve(domain.stencil_matrix, g)
            else:
                d = -pre.factor(x)(g)
        else:
            d = -g
        if g_prev is not None:
            s = x - x_prev
            y = d - g_prev
            sy = -float(s @ y)
            if sy > 0:
                alpha = float(s @ s) / sy
        slope = domain.cell_volume * float(g @ d)
        a = alpha
        for _ in range(80):
            y = x + a * d
            Jy = _objective(domain, y, fv, p)
            if Jy <= J + opts.sufficient_decrease * a * slope + 8 * _EPS * abs(J):
                break
            a *= opts.shrink
        else:
            status = "stalled"
            break
        if p < 2.0:
            # faces flat up to rounding keep the residual at |Dx|^(p-1)
            obj = lambda z: _objective(domain, z, fv, p)  # noqa: E731
            grad = lambda z: (plap_of(domain, z, p) - fv, None)  # noqa: E731
            y, Jy = _snap_flat(domain, y, Jy, p, obj, grad, 8 * _EPS * abs(Jy), sphere=False)
        x_prev, g_prev = x, d
        x, J = y, Jy
    raise ConvergenceError(
        f"resolvent did not reach tol {opts.tol:.1e} ({status}, residual {res:.3e})",
        res,
        Field(domain, x),
        {"status": status, "iterations": it},
    )


def torsion(domain: GridDomain, p, opts: ResolventOptions | None = None) -> Field:
    """Torsion function: the resolvent of the constant 1."""
    w = resolvent(domain, Field.ones(domain), p, opts)
    if w.values.size and w.values.min() < -1e-12:
        raise AssertionError(f"torsion function negative: min {w.values.min():.3e}")
    return w


def energy_bound_check(w: Field, p) -> bool:
    """``E(w) <= int w``, the energy bound satisfied by subsolutions of -Delta_p w = 1."""
    p = as_p(p)
    dom = w.domain
    return energy_of(dom, w.values, p) <= dom.cell_volume * float(np.sum(w.values)) + 1e-9
