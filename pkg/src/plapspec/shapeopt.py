"""Minimize ``f(lambda_1, lambda_2)`` over masks with a fixed number of cells.

The search alternates two moves on a mask ``A`` inside a box:

* threshold: keep the ``c`` box cells with the largest smoothed merit
  ``|u1|^p + beta |u2|^p`` (eigenfunctions of the current mask), which grows
  the mask where the eigenfunctions are steep at the boundary and trims it
  where they are flat;
* swaps: when thresholding does not help, try a batch of random exchanges of
  one boundary cell for one exterior neighbour cell and keep the best.

A move is accepted only if the objective decreases, so the accepted sequence
is non-increasing and every accepted mask has exactly ``c`` cells.
"""

from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla
from scipy import ndimage

from .calculus import as_p, norm_of
from .grid import Field, GridDomain, components, format_mask
from .spectrum import EigenOptions, SpectralReport, lambda2, per_component_lambda1


class InfeasibleBudget(ValueError):
    pass


@dataclass(frozen=True)
class ShapeObjective:
    """``f(l1, l2)``, non-decreasing in both arguments.

    Built with :meth:`lambda1`, :meth:`lambda2`, :meth:`weighted` or
    :meth:`tabulated`.
    """

    kind: str
    a: float = 1.0
    b: float = 0.0
    table: tuple = ()

    def __post_init__(self):
        if self.kind not in ("lambda1", "lambda2", "weighted", "tabulated"):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.a < 0 or self.b < 0:
            raise ValueError("weights must be nonnegative")
        if self.kind == "tabulated":
            l1, l2, F = (np.asarray(x, dtype=float) for x in self.table)
            if np.any(np.diff(l1) <= 0) or np.any(np.diff(l2) <= 0):
                raise ValueError("table axes must increase")
            if np.any(np.diff(F, axis=0) < 0) or np.any(np.diff(F, axis=1) < 0):
                raise ValueError("tabulated objective must be non-decreasing in both arguments")

    @classmethod
    def lambda1(cls):
        return cls("lambda1", 1.0, 0.0)

    @classmethod
    def lambda2(cls):
        return cls("lambda2", 0.0, 1.0)

    @classmethod
    def weighted(cls, a: float, b: float):
        return cls("weighted", float(a), float(b))

    @classmethod
    def tabulated(cls, l1_axis, l2_axis, values):
        return cls("tabulated", table=(tuple(l1_axis), tuple(l2_axis), tuple(map(tuple, values))))

    @classmethod
    def parse(cls, text: str) -> "ShapeObjective":
        """``lambda1``, ``lambda2`` or ``a*l1+b*l2`` written as ``weighted:a,b``."""
        if text in ("lambda1", "lambda2"):
            return getattr(cls, text)()
        if text.startswith("weighted:"):
            a, b = (float(x) for x in text.split(":", 1)[1].split(","))
            return cls.weighted(a, b)
        raise ValueError(f"unknown objective {text!r}")

    @property
    def uses_lambda2(self) -> bool:
        return self.kind == "tabulated" or self.b > 0

    def __call__(self, l1: float, l2: float) -> float:
        if self.kind != "tabulated":
            return self.a * l1 + self.b * l2
        from scipy.interpolate import RegularGridInterpolator

        x, y, F = (np.asarray(v, dtype=float) for v in self.table)
        f = RegularGridInterpolator((x, y), F, bounds_error=False, fill_value=None)
        return float(f([[l1, l2]])[0])


@dataclass
class ShapeOptions:
    max_iters: int = 200
    swap_batch: int = 32
    patience: int = 3
    smoothing: float = 1.0
    seed: int = 0
    threads: int = 1
    beta: float | None = None  # merit weight of u2; 1 when the objective uses lambda2
    eig: EigenOptions = field(default_factory=EigenOptions)


@dataclass
class Evaluation:
    mask: np.ndarray
    l1: float
    l2: float
    f: float
    u1: np.ndarray  # on the full box grid
    u2: np.ndarray


@dataclass
class ShapeRunState:
    box: GridDomain
    cells: int
    objective: ShapeObjective
    p: float
    current: Evaluation
    iteration: int = 0
    seed: int = 0
    best: Evaluation | None = None
    log: list = field(default_factory=list)  # (iteration, l1, l2, f, accepted)
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if self.best is None:
            self.best = self.current
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# seed={self.seed} cells={self.cells} p={self.p!r}\n")
        buf.write("iteration,lambda1,lambda2,f,accepted\n")
        for it, l1, l2, f, acc in self.log:
            buf.write(f"{it},{l1:.17g},{l2:.17g},{f:.17g},{int(acc)}\n")
        return buf.getvalue()


def _grid_mask(box: GridDomain, sel: np.ndarray) -> np.ndarray:
    g = np.zeros(box.shape, dtype=bool)
    g[box.mask] = sel
    return g


def _linear_pairs(dom: GridDomain, k: int):
    n = dom.n_active
    A = dom.stencil_matrix
    if n <= k + 1 or n <= 200:
        w, V = np.linalg.eigh(A.toarray())
        return w[:k], V[:, :k]
    w, V = spla.eigsh(A, k=k, sigma=0.0, which="LM", v0=np.ones(n))
    order = np.argsort(w)
    return w[order], V[:, order]


def evaluate(box: GridDomain, mask: np.ndarray, objective: ShapeObjective, p: float, eig: EigenOptions) -> Evaluation:
    """Eigenvalues, objective and eigenfunctions (on the box grid) of a mask.

    At p = 2 both eigenpairs come from one sparse eigensolve of the stencil;
    otherwise the full first/second eigenvalue machinery is used.
    """
    dom = box.with_mask(_grid_mask(box, mask))
    full = lambda x: Field(dom, x).on(box).values  # noqa: E731
    if p == 2.0:
        if dom.n_active == 1:
            w, V = _linear_pairs(dom, 1)
            l1 = l2 = float(w[0])
            x1 = x2 = V[:, 0]
        else:
            w, V = _linear_pairs(dom, 2)
            l1, l2 = float(w[0]), float(w[1])
            x1, x2 = V[:, 0], V[:, 1]
        x1 = x1 / norm_of(dom, x1, p)
        x2 = x2 / norm_of(dom, x2, p)
        return Evaluation(mask, l1, l2, objective(l1, l2), full(x1), full(x2))
    if objective.uses_lambda2:
        rep = lambda2(dom, p, eig)
        return Evaluation(mask, rep.lambda1, rep.lambda2, objective(rep.lambda1, rep.lambda2), full(rep.u1.values), full(rep.u2.values))
    table = per_component_lambda1(dom, p, eig)
    best = min(table, key=lambda c: (c.pair.lam, c.component_id))
    x1 = best.pair.u.on(dom).values
    l1 = best.pair.lam
    return Evaluation(mask, l1, np.nan, objective(l1, 0.0), full(x1), np.zeros(box.n_active))


def _merit(state: ShapeRunState, beta: float, sigma: float) -> np.ndarray:
    box, p = state.box, state.p
    m = np.abs(state.current.u1) ** p + beta * np.abs(state.current.u2) ** p
    g = np.zeros(box.shape)
    g[box.mask] = m
    if sigma > 0:
        g = ndimage.gaussian_filter(g, sigma, mode="constant")
    return g[box.mask]


def _top_cells(merit: np.ndarray, c: int) -> np.ndarray:
    order = np.argsort(-merit, kind="stable")[:c]
    out = np.zeros(merit.size, dtype=bool)
    out[order] = True
    return out


def _swap_candidates(box: GridDomain, sel: np.ndarray):
    """Inner boundary cells and exterior neighbours, as box-cell numbers."""
    g = np.zeros(box.shape, dtype=bool)
    g[box.mask] = sel
    structure = ndimage.generate_binary_structure(box.dim, 1)
    outer = ndimage.binary_dilation(g, structure) & ~g & box.mask
    inner = g & ~ndimage.binary_erosion(g, structure, border_value=0)
    idx = box.index
    return idx[inner], idx[outer]


def _accept(state: ShapeRunState, ev: Evaluation) -> bool:
    cur = state.current.f
    ok = ev.f < cur - 1e-12 * abs(cur)
    state.log.append((state.iteration, ev.l1, ev.l2, ev.f, ok))
    if ok:
        state.current = ev
        if ev.f < state.best.f:
            state.best = ev
    return ok


def threshold_step(state: ShapeRunState, opts: ShapeOptions | None = None) -> ShapeRunState:
    """One threshold move, falling back to a batch of random swaps.

    The state is updated in place (and returned); it is unchanged when no
    proposal lowers the objective.
    """
    opts = opts or ShapeOptions()
    beta = opts.beta if opts.beta is not None else (1.0 if state.objective.uses_lambda2 else 0.0)
    state.iteration += 1
    sel = state.current.mask
    for sigma in (opts.smoothing, 0.0):
        cand = _top_cells(_merit(state, beta, sigma), state.cells)
        if not np.array_equal(cand, sel):
            ev = evaluate(state.box, cand, state.objective, state.p, opts.eig)
            if _accept(state, ev):
                return state
    inner, outer = _swap_candidates(state.box, sel)
    if len(inner) == 0 or len(outer) == 0:
        return state
    props = []
    for _ in range(opts.swap_batch):
        m = sel.copy()
        m[state.rng.choice(inner)] = False
        m[state.rng.choice(outer)] = True
        props.append(m)

    def run(m):
        return evaluate(state.box, m, state.objective, state.p, opts.eig)

    if opts.threads > 1:
        with ThreadPoolExecutor(max_workers=opts.threads) as ex:
            evals = list(ex.map(run, props))
    else:
        evals = [run(m) for m in props]
    best = min(evals, key=lambda e: e.f)
    _accept(state, best)
    return state


def initial_mask(box: GridDomain, c: int, objective: ShapeObjective, p: float, eig: EigenOptions) -> np.ndarray:
    """Best of a few top-``c`` starts built from the box's own eigenfunctions.

    Candidates are the merit ``|u1|^p + beta |u2|^p`` and, for objectives
    involving the second eigenvalue, ``|u2|^p`` alone (its two nodal lobes).
    """
    ev = evaluate(box, np.ones(box.n_active, dtype=bool), objective, p, eig)
    beta = 1.0 if objective.uses_lambda2 else 0.0
    starts = [_top_cells(np.abs(ev.u1) ** p + beta * np.abs(ev.u2) ** p, c)]
    if objective.uses_lambda2:
        starts.append(_top_cells(np.abs(ev.u2) ** p, c))
    if len(starts) == 1:
        return starts[0]
    scores = [evaluate(box, m, objective, p, eig).f for m in starts]
    return starts[int(np.argmin(scores))]


def optimize_shape(
    box: GridDomain,
    c_cells: int,
    objective: ShapeObjective,
    p,
    opts: ShapeOptions | None = None,
    initial: np.ndarray | None = None,
    callback: Callable | None = None,
) -> tuple[GridDomain, SpectralReport, ShapeRunState]:
    """Search for a mask of exactly ``c_cells`` cells minimizing the objective.

    Returns the best mask, its spectral report (computed with the general
    machinery) and the run state holding the log.  Deterministic for a fixed
    ``opts.seed``.
    """
    p = as_p(p)
    opts = opts or ShapeOptions()
    box.require_nonempty()
    c = int(c_cells)
    if not 1 <= c <= box.n_active:
        raise InfeasibleBudget(f"cell budget {c_cells} outside [1, {box.n_active}]")
    sel = initial_mask(box, c, objective, p, opts.eig) if initial is None else np.asarray(initial, dtype=bool)
    if sel.shape == box.shape:
        sel = sel[box.mask]
    if sel.sum() != c:
        raise InfeasibleBudget(f"initial mask has {int(sel.sum())} cells, expected {c}")
    state = ShapeRunState(box, c, objective, p, evaluate(box, sel, objective, p, opts.eig), seed=opts.seed)
    state.log.append((0, state.current.l1, state.current.l2, state.current.f, True))
    idle = 0
    if c < box.n_active:
        for _ in range(opts.max_iters):
            before = state.current.f
            threshold_step(state, opts)
            if callback is not None:
                callback(state)
            idle = idle + 1 if state.current.f >= before else 0
            if idle >= opts.patience:
                break
    dom = box.with_mask(_grid_mask(box, state.best.mask))
    return dom, lambda2(dom, p, opts.eig, method="linear" if p == 2.0 else "minimax"), state


def mask_text(dom: GridDomain) -> str:
    return format_mask(dom)


def component_sizes(dom: GridDomain) -> list[int]:
    return [int(s) for s in components(dom).sizes]
