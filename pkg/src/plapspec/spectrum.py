"""First and second Dirichlet eigenvalues of the discrete p-Laplacian.

The first eigenvalue is the minimum of the energy on the unit L^p sphere.  It
is computed component by component: a first eigenfunction of the whole mask
lives on one component, and the global value is the smallest per-component
one.  The second eigenvalue is equal to the first when that minimum is
attained on more than one component; otherwise it is the mountain-pass value
computed in :mod:`plapspec.minimax`.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from ._descent import Preconditioner, minimize_on_sphere
from .calculus import as_p, energy_of, norm_of, residual_of
from .grid import ComponentLabeling, Field, GridDomain, component_domain, components
from .solver import ConvergenceError


@dataclass
class EigenOptions:
    """Options shared by the eigenvalue routines.

    ``restarts`` extra random initializations are run per component on top
    of the deterministic start; the lowest converged value wins.
    """

    tol: float = 1e-8
    max_iters: int = 5000
    restarts: int = 1
    seed: int = 0
    simple_gap: float = 1e-6
    threads: int = 1


@dataclass
class EigenPair:
    lam: float
    u: Field
    residual: float
    component_support: frozenset = frozenset()
    iterations: int = 0
    status: str = "converged"


@dataclass
class ComponentEigen:
    component_id: int
    cells: int
    pair: EigenPair  # on the component's sub-mask


@dataclass
class SpectralReport:
    lambda1: float
    lambda2: float
    u1: Field
    u2: Field
    simple1: bool
    components: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lambda1 > self.lambda2:
            raise ValueError("lambda1 must not exceed lambda2")

    def to_dict(self) -> dict:
        return {
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "simple1": self.simple1,
            "components": [
                {"id": c.component_id, "cells": c.cells, "lambda1": c.pair.lam, "residual": c.pair.residual}
                for c in self.components
            ],
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())


def _render(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_render(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}{_render(v, indent, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not np.isfinite(x):
            return json.dumps(str(x))
        return format(x, ".17g")
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def dumps(obj, indent: int = 2) -> str:
    """JSON text with insertion-ordered keys and 17-significant-digit floats."""
    return _render(obj, indent, 0) + "\n"


# -- first eigenvalue -----------------------------------------------------------


def _sign_fix(x: np.ndarray) -> np.ndarray:
    # np.argmax returns the lowest index among ties
    return -x if x[int(np.argmax(np.abs(x)))] < 0 else x


def _initial_guess(domain: GridDomain) -> np.ndarray:
    """p = 2 torsion function: positive on a connected mask and cheap."""
    if domain.n_active == 1:
        return np.ones(1)
    return spla.spsolve(domain.stencil_matrix, np.ones(domain.n_active))


def _solve_connected(domain: GridDomain, p: float, opts: EigenOptions, seed_offset: int = 0) -> EigenPair:
    pre = Preconditioner(domain, p)
    starts = [_initial_guess(domain)]
    rng = np.random.default_rng([opts.seed, seed_offset])
    for _ in range(opts.restarts):
        starts.append(rng.standard_normal(domain.n_active))
    best = None
    for x0 in starts:
        res = minimize_on_sphere(domain, x0, p, tol=opts.tol, max_iters=opts.max_iters, precond=pre)
        if best is None or res.value < best.value - 1e-10 * abs(best.value):
            best = res
        elif res.value <= best.value + 1e-10 * abs(best.value) and res.residual < best.residual:
            # energies tie to rounding: keep the start that reached the lower residual
            best = res
    x = _sign_fix(best.x)
    lam = energy_of(domain, x, p)
    pair = EigenPair(lam, Field(domain, x), residual_of(domain, x, lam, p), iterations=best.iterations, status=best.status)
    if pair.residual > opts.tol:
        raise ConvergenceError(
            f"first eigenvalue solve stopped ({best.status}) with residual {pair.residual:.3e} > tol {opts.tol:.1e}",
            pair.residual,
            pair,
            {"iterations": best.iterations, "status": best.status, "lam": lam},
        )
    return pair


def solve_from(domain: GridDomain, x0, p, opts: EigenOptions | None = None) -> EigenPair:
    """Sphere descent from the given start only (no restarts), sign-fixed.

    On a connected mask any start converges to the first eigenpair; the
    returned ``status`` tells whether the residual tolerance was met.
    """
    p = as_p(p)
    opts = opts or EigenOptions()
    x0 = x0.values if isinstance(x0, Field) else np.asarray(x0, dtype=float)
    res = minimize_on_sphere(domain, x0, p, tol=opts.tol, max_iters=opts.max_iters)
    x = _sign_fix(res.x)
    lam = energy_of(domain, x, p)
    return EigenPair(lam, Field(domain, x), residual_of(domain, x, lam, p), iterations=res.iterations, status=res.status)


def per_component_lambda1(
    domain: GridDomain,
    p,
    opts: EigenOptions | None = None,
    labeling: ComponentLabeling | None = None,
) -> list[ComponentEigen]:
    """First eigenpair of every component, each on its own sub-mask."""
    p = as_p(p)
    opts = opts or EigenOptions()
    labeling = labeling or components(domain)
    subs = [component_domain(domain, labeling, k) for k in range(labeling.count)]

    def work(k):
        return ComponentEigen(k, labeling.sizes[k], _solve_connected(subs[k], p, opts, seed_offset=k))

    if opts.threads > 1 and labeling.count > 1:
        with ThreadPoolExecutor(max_workers=opts.threads) as ex:
            return list(ex.map(work, range(labeling.count)))
    return [work(k) for k in range(labeling.count)]


def _minimal_components(table: list[ComponentEigen], gap: float) -> list[int]:
    lam_min = min(c.pair.lam for c in table)
    return [c.component_id for c in table if c.pair.lam <= lam_min * (1.0 + gap)]


def _embed(pair: EigenPair, domain: GridDomain, component_id: int) -> EigenPair:
    u = pair.u.on(domain)
    return EigenPair(pair.lam, u, pair.residual, frozenset({component_id}), pair.iterations, pair.status)


def lambda1(domain: GridDomain, p, opts: EigenOptions | None = None, table=None) -> EigenPair:
    """First eigenpair; ``u`` is nonnegative and supported on one component."""
    domain.require_nonempty()
    table = table or per_component_lambda1(domain, p, opts)
    best = min(table, key=lambda c: (c.pair.lam, c.component_id))
    return _embed(best.pair, domain, best.component_id)


def is_simple(domain: GridDomain, p, opts: EigenOptions | None = None, table=None) -> bool:
    """True iff exactly one component attains the smallest first eigenvalue."""
    opts = opts or EigenOptions()
    table = table or per_component_lambda1(domain, p, opts)
    return len(_minimal_components(table, opts.simple_gap)) == 1


# -- second eigenvalue ------------------------------------------------------------


def lambda2(domain: GridDomain, p, opts: EigenOptions | None = None, path_opts=None, method: str = "minimax") -> SpectralReport:
    """Full report with both eigenvalues.

    ``method="minimax"`` runs the mountain-pass estimator whenever the first
    eigenvalue is simple.  ``method="linear"`` (p = 2 only) reads the second
    eigenpair off a sparse symmetric eigensolve of the stencil instead.
    """
    from . import minimax

    p = as_p(p)
    opts = opts or EigenOptions()
    domain.require_nonempty()
    labeling = components(domain)
    table = per_component_lambda1(domain, p, opts, labeling)
    first = lambda1(domain, p, opts, table)
    minimal = _minimal_components(table, opts.simple_gap)
    simple = len(minimal) == 1
    diag = {"p": p, "components": labeling.count, "method": method}

    if not simple:
        other = table[minimal[1]]
        u2 = _embed(other.pair, domain, other.component_id).u
        diag["branch"] = "degenerate"
        return SpectralReport(first.lam, first.lam, first.u, u2, False, table, diag)

    if method == "linear":
        if p != 2.0:
            raise ValueError("the linear method is only valid for p = 2")
        lam2, u2 = linear_second_pair(domain)
        lam2 = max(lam2, first.lam)
        diag["branch"] = "linear"
        diag["residual2"] = residual_of(domain, u2.values, lam2, p)
        return SpectralReport(first.lam, lam2, first.u, u2, True, table, diag)

    result = minimax.lambda2_minimax(domain, p, opts, path_opts, table=table, labeling=labeling, first=first)
    diag.update(
        branch=result.branch,
        residual2=result.residual,
        path_nodes=len(result.path),
        warnings=list(result.warnings),
    )
    lam2 = max(result.lam, first.lam)
    return SpectralReport(first.lam, lam2, first.u, result.u2, True, table, diag)


def linear_second_pair(domain: GridDomain) -> tuple[float, Field]:
    """Second eigenpair of the p = 2 stencil (sparse shift-invert eigensolve)."""
    n = domain.n_active
    A = domain.stencil_matrix
    if n <= 400:
        w, V = np.linalg.eigh(A.toarray())
    else:
        v0 = np.ones(n)
        w, V = spla.eigsh(A, k=2, sigma=0.0, which="LM", v0=v0)
        order = np.argsort(w)
        w, V = w[order], V[:, order]
    if n < 2:
        raise ValueError("a one-cell mask has no second eigenpair")
    x = _sign_fix(V[:, 1])
    x = x / norm_of(domain, x, 2.0)
    return float(energy_of(domain, x, 2.0)), Field(domain, x)
