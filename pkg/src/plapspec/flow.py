"""Minimizing-movement flow on the L^p unit sphere.

Each step picks a local minimizer of

    ||w - v_prev||_p^p / tau^(p-1) + E(w)      over ||w||_p = 1

warm-started at ``v_prev``.  Energies decrease along the trace and the flow
settles on a first eigenfunction when started below the second eigenvalue.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._descent import Preconditioner, minimize_on_sphere
from .calculus import as_p, duality_map, energy_of, norm_of, power_sum_of, residual_of
from .grid import Field, GridDomain, format_mask
from .solver import ConvergenceError

_EPS = np.finfo(float).eps


class FlowWarning(UserWarning):
    pass


@dataclass
class FlowOptions:
    """Options for :func:`run_flow`.

    tau : float or None
        First time step; ``1/(4 E(v0))`` when None.
    tau_growth : float
        Step ``k`` uses ``tau * tau_growth**k``.  Set to 1 for the uniform
        scheme.
    step_tol, residual_tol : float
        The run stops once ``||v_k - v_{k-1}||_p / tau_k <= step_tol`` and the
        eigen-residual of ``v_k`` is at most ``residual_tol``.
    stall_steps : int
        Stop (flagged) after this many consecutive steps whose energy drop is
        at rounding level.
    """

    tau: float | None = None
    tau_growth: float = 1.1
    tau_max: float = 1e12
    max_steps: int = 2000
    step_tol: float = 1e-7
    residual_tol: float = 1e-6
    stall_steps: int = 8
    inner_tol: float = 1e-10
    inner_max_iters: int = 500

    def __post_init__(self):
        if self.tau is not None and not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.tau_growth >= 1:
            raise ValueError("tau_growth must be >= 1")


@dataclass
class FlowTrace:
    p: float
    times: list = field(default_factory=list)
    taus: list = field(default_factory=list)
    fields: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    sigmas: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)
    kkt_residuals: list = field(default_factory=list)
    status: str = "running"
    warning: bool = False

    def __len__(self):
        return len(self.fields)

    @property
    def terminal(self) -> Field:
        return self.fields[-1]

    def terminal_residual(self) -> float:
        v = self.fields[-1]
        return residual_of(v.domain, v.values, self.energies[-1], self.p)

    def stack(self) -> np.ndarray:
        return np.array([f.values for f in self.fields])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "energy", "sigma", "step_norm"])
        for row in zip(self.times, self.energies, self.sigmas, self.step_norms):
            w.writerow([format(float(x), ".17g") for x in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def dump_fields(self, path, every: int = 1) -> None:
        """Write every ``every``-th field as mask-aligned value blocks."""
        dom = self.fields[0].domain
        with open(path, "w") as fh:
            fh.write(format_mask(dom))
            for k in range(0, len(self.fields), every):
                vals = self.fields[k].full()
                rows = vals.reshape(1, -1) if vals.ndim == 1 else vals.reshape(vals.shape[0], -1)
                fh.write(f"# step {k} t {self.times[k]!r}\n")
                for r in rows:
                    fh.write(" ".join(format(float(x), ".17g") for x in r) + "\n")


def _multiplier(dom, w, v, tau, p):
    return energy_of(dom, w, p) + tau ** (1.0 - p) * dom.cell_volume * float(duality_map(w - v, p) @ w)


def _step(dom, v, tau, p, opts, pre):
    c = tau ** (1.0 - p)
    res = minimize_on_sphere(
        dom,
        v,
        p,
        c=c,
        anchor=v,
        tol=opts.inner_tol,
        max_iters=opts.inner_max_iters,
        explicit_tau=tau,
        precond=pre,
    )
    w = res.x
    # a warm-started descent never ends above its start; guard against
    # rounding in the renormalization anyway
    J_w = res.value
    if J_w > energy_of(dom, v, p) + 16 * _EPS * abs(J_w):
        w = v.copy()
    return w, _multiplier(dom, w, v, tau, p), res


def mm_step(v_prev: Field, tau: float, p, opts: FlowOptions | None = None) -> tuple[Field, float]:
    """One implicit step; returns the new field and its Lagrange multiplier.

    Raises :class:`ConvergenceError` if the inner KKT residual misses
    ``opts.inner_tol`` by more than the rounding floor of the problem and the
    step did not lower the objective.
    """
    p = as_p(p)
    opts = opts or FlowOptions()
    if not tau > 0:
        raise ValueError("tau must be positive")
    dom = v_prev.domain
    v = v_prev.values / norm_of(dom, v_prev.values, p)
    w, sigma, res = _step(dom, v, tau, p, opts, Preconditioner(dom, p))
    if res.status == "max_iters" and res.residual > opts.inner_tol:
        raise ConvergenceError(
            f"implicit step KKT residual {res.residual:.3e} above {opts.inner_tol:.1e}",
            res.residual,
            Field(dom, w),
        )
    return Field(dom, w), sigma


def step_objective(w: Field, v_prev: Field, tau: float, p) -> float:
    """``||w - v_prev||_p^p / tau^(p-1) + E(w)``."""
    p = as_p(p)
    dom = w.domain
    return tau ** (1.0 - p) * power_sum_of(dom, w.values - v_prev.values, p) + energy_of(dom, w.values, p)


def run_flow(v0: Field, p, opts: FlowOptions | None = None) -> FlowTrace:
    p = as_p(p)
    opts = opts or FlowOptions()
    dom = v0.domain
    v = v0.values / norm_of(dom, v0.values, p)
    E = energy_of(dom, v, p)
    tau = opts.tau if opts.tau is not None else 1.0 / (4.0 * E)
    pre = Preconditioner(dom, p)

    tr = FlowTrace(p)
    tr.times.append(0.0)
    tr.taus.append(0.0)
    tr.fields.append(Field(dom, v))
    tr.energies.append(E)
    tr.sigmas.append(E)
    tr.step_norms.append(0.0)
    tr.kkt_residuals.append(np.nan)

    if residual_of(dom, v, E, p) <= opts.residual_tol:
        tr.status = "converged"
        return tr

    t = 0.0
    flat = 0
    best_res = np.inf
    for _ in range(opts.max_steps):
        w, sigma, inner = _step(dom, v, tau, p, opts, pre)
        E_new = energy_of(dom, w, p)
        sn = norm_of(dom, w - v, p)
        t += tau
        tr.times.append(t)
        tr.taus.append(tau)
        tr.fields.append(Field(dom, w))
        tr.energies.append(E_new)
        tr.sigmas.append(sigma)
        tr.step_norms.append(sn)
        tr.kkt_residuals.append(inner.residual)
        drop = E - E_new
        v, E = w, E_new
        if sn / tau <= opts.step_tol and residual_of(dom, v, E, p) <= opts.residual_tol:
            tr.status = "converged"
            return tr
        res = residual_of(dom, v, E, p)
        # energy converges much faster than the residual; only a step that
        # improves neither counts as flat
        if drop <= 64 * _EPS * abs(E) and res > 0.99 * best_res:
            flat += 1
        else:
            flat = 0
        best_res = min(best_res, res)
        if flat >= opts.stall_steps:
            tr.status = "stalled"
            break
        tau = min(tau * opts.tau_growth, opts.tau_max)
    else:
        tr.status = "max_steps"
    tr.warning = True
    warnings.warn(
        f"flow stopped ({tr.status}) with eigen-residual {tr.terminal_residual():.3e}",
        FlowWarning,
        stacklevel=2,
    )
    return tr


def holder_check(trace: FlowTrace, p, slack: float = 1e-9) -> bool:
    """Check ``||v_j - v_i||_p <= E(v_0)^(1/p) (t_j - t_i + tau_1)^((p-1)/p)``."""
    p = as_p(p)
    n = len(trace)
    if n < 2:
        return True
    dom = trace.fields[0].domain
    X = trace.stack()
    t = np.asarray(trace.times)
    tau = trace.taus[1]
    E0 = trace.energies[0]
    for i in range(n - 1):
        d = (dom.cell_volume * np.sum(np.abs(X[i + 1 :] - X[i]) ** p, axis=1)) ** (1.0 / p)
        bound = E0 ** (1.0 / p) * (t[i + 1 :] - t[i] + tau) ** ((p - 1.0) / p)
        if np.any(d > bound + slack):
            return False
    return True


def dissipation(trace: FlowTrace, p) -> np.ndarray:
    """Per-step dissipation ``||v_k - v_{k-1}||_p^p / tau_k^(p-1)``."""
    p = as_p(p)
    sn = np.asarray(trace.step_norms[1:])
    taus = np.asarray(trace.taus[1:])
    return sn**p / taus ** (p - 1.0)


def dissipation_check(trace: FlowTrace, p, slack: float = 1e-9) -> bool:
    if len(trace) < 2:
        return True
    return float(np.sum(dissipation(trace, p))) <= trace.energies[0] + slack
