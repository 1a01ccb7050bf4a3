"""Paths on the L^p unit sphere and the mountain-pass estimate of lambda_2.

The second eigenvalue is the smallest level ``c`` such that some path on the
sphere joins ``u1`` to ``-u1`` without its energy exceeding ``c``.  The
estimator builds a good initial path explicitly, lowers its maximum with a
string method and finally polishes the highest node into an eigenfield with
a damped Newton iteration.

Initial paths
-------------
connected component
    Split a sign-changing trial field ``psi`` into its normalized positive
    and negative parts ``a`` and ``b``, join them by the level curve
    ``(1-t) a + (1-(1-t)^p)^(1/p) b`` and attach the two minimizing-movement
    flows started at ``a`` and ``b``, which end at ``u1`` and ``-u1``.
other component available
    ``u1`` and a first eigenfunction of a different component have disjoint
    supports; the closed curve through both has maximum energy equal to the
    larger of the two first eigenvalues.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .calculus import spow, as_p, duality_map, energy_of, norm_of, plap_of, residual_of
from .flow import FlowOptions, FlowWarning, run_flow
from .grid import Field, GridDomain, component_domain, components, format_mask

_EPS = np.finfo(float).eps


class PathError(ValueError):
    pass


@dataclass
class PathOptions:
    """Options for :func:`optimize_path` and :func:`lambda2_minimax`.

    nodes : int
        Number of path segments ``M`` after resampling.
    tol_path : float
        Stop once a sweep lowers the maximum by at most this relative amount.
    kappa : float
        Node moves are capped at ``kappa`` times the shorter adjacent
        segment so that nodes cannot jump across the saddle.
    polish_tol : float
        Target eigen-residual for the polished argmax node.
    """

    nodes: int = 64
    max_sweeps: int = 2000
    tol_path: float = 1e-7
    kappa: float = 0.5
    max_rejects: int = 4
    polish_iters: int = 40
    polish_tol: float = 1e-8
    join_tol: float = 1e-2
    flow: FlowOptions = field(default_factory=FlowOptions)


@dataclass
class Path:
    """Nodes ``gamma(t_i)`` on the unit sphere, one row per node."""

    domain: GridDomain
    params: np.ndarray
    nodes: np.ndarray
    tags: tuple = ("", "")
    pieces: tuple = ()  # (first node, last node, label) per constituent piece
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float)
        self.nodes = np.asarray(self.nodes, dtype=float)
        if self.nodes.ndim != 2 or len(self.nodes) != len(self.params):
            raise ValueError("one parameter per node required")
        if len(self.params) > 1 and np.any(np.diff(self.params) <= 0):
            raise ValueError("path parameters must increase strictly")
        if not self.pieces:
            self.pieces = ((0, len(self.nodes) - 1, self.tags[0] or "path"),)

    def __len__(self):
        return len(self.nodes)

    def node(self, i: int) -> Field:
        return Field(self.domain, self.nodes[i])

    def energies(self, p) -> np.ndarray:
        p = as_p(p)
        G = self.domain.difference_matrix @ self.nodes.T
        return self.domain.cell_volume * np.sum(np.abs(G) ** p, axis=0)

    def norms(self, p) -> np.ndarray:
        p = as_p(p)
        return (self.domain.cell_volume * np.sum(np.abs(self.nodes) ** p, axis=1)) ** (1.0 / p)

    def piece_of(self, i: int) -> str:
        for lo, hi, label in self.pieces:
            if lo <= i <= hi:
                return label
        return ""

    def to_csv(self, p, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "energy"])
        for t, e in zip(self.params, self.energies(p)):
            w.writerow([format(float(t), ".17g"), format(float(e), ".17g")])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def dump_nodes(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(format_mask(self.domain))
            for i in range(len(self)):
                vals = self.node(i).full()
                rows = vals.reshape(1, -1) if vals.ndim == 1 else vals.reshape(vals.shape[0], -1)
                fh.write(f"# node {i} t {self.params[i]!r}\n")
                for r in rows:
                    fh.write(" ".join(format(float(x), ".17g") for x in r) + "\n")


def _values(u, domain=None) -> np.ndarray:
    if domain is not None and u.domain is not domain:
        return u.on(domain).values
    return u.values


def _lp(dom, x, p):
    return norm_of(dom, x, p)


# -- explicit constructions ---------------------------------------------------------


def sign_split_path(u2: Field, p, M: int = 64) -> Path:
    """Curve from ``u2+/||u2+||`` to ``-u2-/||u2-||`` on the sphere."""
    p = as_p(p)
    dom = u2.domain
    x = u2.values
    pos = np.maximum(x, 0.0)
    neg = np.maximum(-x, 0.0)
    if not np.any(pos) or not np.any(neg):
        raise PathError("not sign-changing")
    a = pos / _lp(dom, pos, p)
    b = neg / _lp(dom, neg, p)
    t = np.linspace(0.0, 1.0, M + 1)
    s = 1.0 - t
    nodes = s[:, None] * a[None, :] - ((1.0 - s**p) ** (1.0 / p))[:, None] * b[None, :]
    return Path(dom, t, nodes, ("split+", "split-"), ((0, M, "split"),))


def bf_curve(u1: Field, u2: Field, p, M: int = 64) -> Path:
    """Closed-form path from ``u1`` through ``u2`` (at t = 1/2) to ``-u1``.

    Requires disjoint supports so that the normalization below is exact.
    """
    p = as_p(p)
    dom = u1.domain
    x1 = u1.values
    x2 = _values(u2, dom)
    if np.any(x1 * x2 != 0.0):
        raise PathError("supports of the two fields overlap")
    if M % 2:
        raise ValueError("M must be even so that t = 1/2 is a node")
    t = np.linspace(0.0, 1.0, M + 1)
    c = np.cos(np.pi * t)
    c[M // 2] = 0.0
    q = t * (1.0 - t)
    den = (np.abs(c) ** p + q**p) ** (1.0 / p)
    nodes = (c[:, None] * x1[None, :] + q[:, None] * x2[None, :]) / den[:, None]
    nodes[0], nodes[-1], nodes[M // 2] = x1, -x1, x2
    return Path(dom, t, nodes, ("u1", "-u1"), ((0, M, "disjoint"),))


def great_circle_path(u1: Field, bump: Field, p, M: int = 64) -> Path:
    """``normalize(cos(pi t) u1 + sin(pi t) bump)``; a generic start path."""
    p = as_p(p)
    dom = u1.domain
    x1, xb = u1.values, _values(bump, dom)
    t = np.linspace(0.0, 1.0, M + 1)
    c = np.cos(np.pi * t)
    c[0], c[-1] = 1.0, -1.0
    s = np.sin(np.pi * t)
    s[0] = s[-1] = 0.0
    nodes = c[:, None] * x1[None, :] + s[:, None] * xb[None, :]
    nrm = (dom.cell_volume * np.sum(np.abs(nodes) ** p, axis=1)) ** (1.0 / p)
    if np.any(nrm == 0):
        raise PathError("bump is a multiple of u1")
    return Path(dom, t, nodes / nrm[:, None], ("u1", "-u1"), ((0, M, "circle"),))


def reverse(path: Path) -> Path:
    M = len(path) - 1
    pieces = tuple((M - hi, M - lo, label) for lo, hi, label in reversed(path.pieces))
    return Path(path.domain, 1.0 - path.params[::-1], path.nodes[::-1].copy(), path.tags[::-1], pieces)


def concat(*paths: Path, tol: float = 1e-8, p: float = 2.0) -> Path:
    """Join paths end to start; each join must match within ``tol`` in L^p.

    The result runs over [0, 1] with piece ``k`` occupying the parameter
    interval of length proportional to its node count.
    """
    if not paths:
        raise ValueError("nothing to concatenate")
    if len(paths) == 1:
        return paths[0]
    dom = paths[0].domain
    for a, b in zip(paths, paths[1:]):
        gap = _lp(dom, a.nodes[-1] - b.nodes[0], p)
        if gap > tol:
            raise PathError(f"endpoint mismatch at join: norm {gap:.3e} > {tol:.1e}")
    nodes = [paths[0].nodes]
    pieces = []
    offset = 0
    for k, pa in enumerate(paths):
        chunk = pa.nodes if k == 0 else pa.nodes[1:]
        if k:
            nodes.append(chunk)
        for lo, hi, label in pa.pieces:
            pieces.append((lo + offset, hi + offset, label))
        offset += len(pa) - 1
    X = np.vstack(nodes)
    t = np.linspace(0.0, 1.0, len(X))
    return Path(dom, t, X, (paths[0].tags[0], paths[-1].tags[1]), tuple(pieces))


def path_max_energy(path: Path, p) -> tuple[float, int]:
    e = path.energies(p)
    i = int(np.argmax(e))
    return float(e[i]), i


# -- string method ------------------------------------------------------------------


def _segments(dom, X, p):
    return (dom.cell_volume * np.sum(np.abs(np.diff(X, axis=0)) ** p, axis=1)) ** (1.0 / p)


def resample(path: Path, M: int, p) -> Path:
    """Redistribute nodes at equal L^p arclength (piecewise-linear, renormalized)."""
    p = as_p(p)
    dom = path.domain
    X = path.nodes
    seg = _segments(dom, X, p)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0:
        raise PathError("path has zero length")
    s /= s[-1]
    t = np.linspace(0.0, 1.0, M + 1)
    j = np.clip(np.searchsorted(s, t, side="right") - 1, 0, len(seg) - 1)
    span = s[j + 1] - s[j]
    a = np.where(span > 0, (t - s[j]) / np.where(span > 0, span, 1.0), 0.0)
    Y = (1.0 - a)[:, None] * X[j] + a[:, None] * X[j + 1]
    Y /= ((dom.cell_volume * np.sum(np.abs(Y) ** p, axis=1)) ** (1.0 / p))[:, None]
    Y[0], Y[-1] = X[0], X[-1]
    return Path(dom, t, Y, path.tags)


def optimize_path(init: Path, p, opts: PathOptions | None = None) -> Path:
    """Lower the path maximum by node-wise descent plus reparametrization.

    Every interior node takes one preconditioned descent step on the sphere,
    capped in length by the adjacent segments, then the nodes are
    redistributed by arclength.  A sweep is kept only if it does not raise
    the maximum, so the returned maximum never exceeds the initial one.
    """
    p = as_p(p)
    opts = opts or PathOptions()
    dom = init.domain
    vol = dom.cell_volume
    lu = spla.splu(sp.csc_matrix(dom.stencil_matrix))
    path = init
    X = path.nodes.copy()
    En = path.energies(p)
    mx = float(En.max())
    history = [mx]
    kappa = opts.kappa
    rejects = 0
    M = len(X) - 1
    alpha = np.ones(M + 1)
    for sweep in range(opts.max_sweeps):
        seg = _segments(dom, X, p)
        new = X.copy()
        Enew = En.copy()
        for i in range(1, M):
            u = X[i]
            E = En[i]
            r = plap_of(dom, u, p) - E * duality_map(u, p)
            d = -lu.solve(r)
            gd = float(r @ d)
            dn = _lp(dom, d, p)
            if dn == 0 or gd >= 0:
                continue
            a = min(2.0 * alpha[i], kappa * min(seg[i - 1], seg[i]) / dn)
            for _ in range(40):
                un = u + a * d
                un /= _lp(dom, un, p)
                Eu = energy_of(dom, un, p)
                if Eu <= E + 1e-4 * a * p * gd * vol:
                    new[i], Enew[i], alpha[i] = un, Eu, a
                    break
                a *= 0.5
        cand = resample(Path(dom, path.params, new, path.tags), M, p)
        Ec = cand.energies(p)
        if Ec.max() <= mx + 1e-12 * mx:
            X, En = cand.nodes, Ec
            path = cand
        else:
            kappa *= 0.5
            rejects += 1
            if rejects >= opts.max_rejects:
                break
            continue
        new_mx = float(En.max())
        history.append(new_mx)
        done = mx - new_mx <= opts.tol_path * mx and sweep > 5
        mx = new_mx
        if done:
            break
    out = Path(dom, path.params, X, init.tags)
    out.history = history
    return out


# -- eigen-polish -------------------------------------------------------------------


def newton_polish(u: Field, lam: float, p, iters: int = 40, tol: float = 1e-8, rel: float = 1e-12):
    """Damped Newton on ``-Delta_p u = lam |u|^(p-2) u``, ``||u||_p = 1``.

    For p < 2 the unknown is ``z = |u|^(p-2) u`` instead of ``u``: the map
    ``z -> u`` is C^1 there, while ``u -> |u|^(p-2) u`` has infinite slope
    at nodal cells and makes plain Newton oscillate.  Face weights are
    floored at ``rel`` times their rms and a singular bordered system is
    regularized.  Returns ``(u, lam, residual)``.
    """
    p = as_p(p)
    dom = u.domain
    D = dom.difference_matrix
    vol = dom.cell_volume
    n = dom.n_active
    dual = p < 2.0
    q = 1.0 / (p - 1.0)

    def to_x(z):
        return spow(z, q) if dual else z

    def to_z(x):
        return duality_map(x, p) if dual else x

    def F(z, lam):
        x = to_x(z)
        phi = z if dual else duality_map(x, p)
        r = plap_of(dom, x, p) - lam * phi
        return np.concatenate([r, [(vol * np.sum(np.abs(x) ** p) - 1.0) / p]])

    x = u.values / _lp(dom, u.values, p)
    res = residual_of(dom, x, lam, p)
    best = (x, lam, res)
    z = to_z(x)
    idle = 0
    for _ in range(iters):
        if res <= tol:
            break
        f = F(z, lam)
        x = to_x(z)
        g = np.abs(D @ x)
        gf = max(rel * np.sqrt(np.mean(g**2)), 1e-300)
        A = (p - 1.0) * (D.T @ sp.diags(np.maximum(g, gf) ** (p - 2.0)) @ D)
        phi = duality_map(x, p)
        if dual:
            dxdz = q * np.abs(z) ** (q - 1.0)
            J11 = A @ sp.diags(dxdz) - lam * sp.identity(n)
            row = vol * phi * dxdz
        else:
            J11 = A - lam * (p - 1.0) * sp.diags(np.abs(x) ** (p - 2.0))
            row = vol * phi
        J = sp.bmat([[J11, -phi[:, None]], [row[None, :], None]]).tocsc()
        try:
            dz = spla.splu(J).solve(-f)
        except RuntimeError:
            dz = None
        if dz is None or not np.all(np.isfinite(dz)):
            mu = 1e-10 * float(abs(J).sum(axis=1).max())
            dz = spla.splu((J + mu * sp.identity(n + 1, format="csc")).tocsc()).solve(-f)
        nf = np.linalg.norm(f)
        a = 1.0
        for _ in range(30):
            zn = z + a * dz[:n]
            ln = lam + a * dz[n]
            if np.linalg.norm(F(zn, ln)) < (1.0 - 1e-4 * a) * nf:
                break
            a *= 0.5
        else:
            break
        xn = to_x(zn)
        xn = xn / _lp(dom, xn, p)
        ln = energy_of(dom, xn, p)
        rn = residual_of(dom, xn, ln, p)
        z, lam = to_z(xn), ln
        # near nodal cells convergence is only linear and the reported
        # residual can lag ||F|| for a step or two
        if rn < best[2] * (1.0 - 1e-3):
            best = (xn, lam, rn)
            res = rn
            idle = 0
        else:
            idle += 1
            if idle >= 3:
                break
    x, lam, res = best
    return Field(dom, x), float(lam), float(res)


# -- the estimator ------------------------------------------------------------------


@dataclass
class Lambda2Result:
    lam: float
    path: Path
    u2: Field
    branch: str
    residual: float
    warnings: list = field(default_factory=list)
    candidates: dict = field(default_factory=dict)

    def __iter__(self):
        # unpacks as (lam, path, u2)
        return iter((self.lam, self.path, self.u2))


def trial_field(domain: GridDomain) -> np.ndarray:
    """Second eigenvector of the p = 2 stencil; the linear surrogate for u2."""
    n = domain.n_active
    A = domain.stencil_matrix
    if n <= 400:
        w, V = np.linalg.eigh(A.toarray())
    else:
        w, V = spla.eigsh(A, k=2, sigma=0.0, which="LM", v0=np.ones(n))
        V = V[:, np.argsort(w)]
    x = V[:, 1]
    return -x if x[int(np.argmax(np.abs(x)))] < 0 else x


def _flow_leg(dom, start, p, opts, target):
    """Flow from ``start``; returns nodes ending exactly at ``target`` or ``-target``."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", FlowWarning)
        tr = run_flow(Field(dom, start), p, opts.flow)
    X = tr.stack()
    end = X[-1]
    d_plus = _lp(dom, end - target, p)
    d_minus = _lp(dom, end + target, p)
    sign = 1.0 if d_plus <= d_minus else -1.0
    gap = min(d_plus, d_minus)
    X = np.vstack([X, sign * target])
    notes = [str(w.message) for w in caught]
    if gap > opts.join_tol:
        notes.append(f"flow leg ended {gap:.2e} away from the first eigenfunction")
    return X, sign, notes


def _split_branch(dom, x1, p, opts, psi=None):
    """Three-piece path on a connected mask, optimized and polished."""
    notes = []
    psi = trial_field(dom) if psi is None else psi
    pos = np.maximum(psi, 0.0)
    neg = np.maximum(-psi, 0.0)
    if not np.any(pos) or not np.any(neg):
        raise PathError("not sign-changing")
    a = pos / _lp(dom, pos, p)
    b = -neg / _lp(dom, neg, p)
    A, sa, na = _flow_leg(dom, a, p, opts, x1)
    B, sb, nb = _flow_leg(dom, b, p, opts, x1)
    notes += na + nb
    split = sign_split_path(Field(dom, psi), p, 4 * opts.nodes)
    legA = Path(dom, np.linspace(0, 1, len(A)), A, ("a", "end"), ((0, len(A) - 1, "leg"),))
    legB = Path(dom, np.linspace(0, 1, len(B)), B, ("b", "end"), ((0, len(B) - 1, "leg"),))
    if sa != sb:
        pieces = (reverse(legA), split, legB) if sa > 0 else (reverse(legB), reverse(split), legA)
        init = concat(*pieces, p=p)
        label = "split"
    else:
        # both legs fell to the same sign: start from a generic circle instead
        bump = psi / _lp(dom, psi, p)
        init = great_circle_path(Field(dom, x1), Field(dom, bump), p, opts.nodes)
        label = "circle"
        notes.append("flow legs reached the same sign; used a circle start path")
    three_max, _ = path_max_energy(init, p)
    start = resample(init, opts.nodes, p)
    path = optimize_path(start, p, opts)
    mx, k = path_max_energy(path, p)
    u2, lam, res = newton_polish(path.node(k), mx, p, opts.polish_iters, opts.polish_tol)
    if abs(lam - mx) <= 1e-2 * mx and res <= 1e-2 * max(1.0, mx):
        nodes = path.nodes.copy()
        nodes[k] = u2.values
        path = Path(dom, path.params, nodes, path.tags)
        path.history = list(getattr(path, "history", []))
        mx2, k2 = path_max_energy(path, p)
        if mx2 > lam * (1.0 + 1e-9):
            notes.append(f"polished node is not the path maximum ({lam:.10g} < {mx2:.10g})")
        lam_out = mx2
    else:
        notes.append(f"eigen-polish rejected (lam {lam:.6g} vs path max {mx:.6g}, residual {res:.2e})")
        u2, lam_out, res = path.node(k), mx, residual_of(dom, path.nodes[k], mx, p)
    if res > opts.polish_tol:
        notes.append(f"eigen-polish residual {res:.3e} above {opts.polish_tol:.1e}")
    return lam_out, path, u2, res, label, notes, three_max


def lambda2_minimax(domain: GridDomain, p, eig_opts=None, opts: PathOptions | None = None, *, table=None, labeling=None, first=None) -> Lambda2Result:
    """Mountain-pass estimate of the second eigenvalue on ``domain``.

    Assumes the first eigenvalue is simple.  With several components the
    disjoint-support branch (first eigenfunction of the next component) is
    compared with the sign-split branch on the minimizing component and the
    lower maximum wins.
    """
    from . import spectrum

    p = as_p(p)
    opts = opts or PathOptions()
    eig_opts = eig_opts or spectrum.EigenOptions()
    labeling = labeling or components(domain)
    table = table or spectrum.per_component_lambda1(domain, p, eig_opts, labeling)
    first = first or spectrum.lambda1(domain, p, eig_opts, table)
    (cid,) = tuple(first.component_support)
    x1 = first.u.values
    cands = {}

    others = [c for c in table if c.component_id != cid]
    if others:
        nxt = min(others, key=lambda c: (c.pair.lam, c.component_id))
        u_other = spectrum._embed(nxt.pair, domain, nxt.component_id).u
        bf = bf_curve(first.u, u_other, p, opts.nodes)
        mx, _ = path_max_energy(bf, p)
        cands["disjoint"] = Lambda2Result(mx, bf, u_other, "disjoint", nxt.pair.residual, [])

    sub = component_domain(domain, labeling, cid)
    if sub.n_active >= 2:
        lam, path, u2, res, label, notes, _ = _split_branch_embedded(domain, sub, x1, p, opts)
        cands["split"] = Lambda2Result(lam, path, u2, label, res, notes)

    if not cands:
        raise PathError("a single-cell domain has no second eigenvalue")
    best = min(cands.values(), key=lambda r: r.lam)
    best.candidates = {k: v.lam for k, v in cands.items()}
    return best


def _split_branch_embedded(domain, sub, x1, p, opts):
    """Run the split branch on the sub-mask and embed the results."""
    x1_sub = Field(domain, x1).on(sub).values
    lam, path, u2, res, label, notes, three = _split_branch(sub, x1_sub, p, opts)
    if sub.same_grid(domain) and sub.n_active == domain.n_active:
        return lam, path, u2, res, label, notes, three
    X = np.array([Field(sub, x).on(domain).values for x in path.nodes])
    full = Path(domain, path.params, X, path.tags, path.pieces)
    full.history = path.history
    return lam, full, u2.on(domain), res, label, notes, three
