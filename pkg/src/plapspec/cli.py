"""Command line front end.

    plapspec eig    --p 2 --mask demos/interval512.txt --out out/
    plapspec flow   --p 3 --box 127 --out out/
    plapspec path   --p 1.5 --box 63 --out out/
    plapspec shape  --p 2 --box 48x24 --cells 576 --objective lambda2 --out out/
    plapspec oracle --p 2

Options can also come from an INI file given with ``--config``; flags on the
command line win.  The ``[run]`` section takes the flag names, and the
``[eig]``, ``[flow]``, ``[path]`` and ``[shape]`` sections override solver
options by field name.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import sys
from pathlib import Path

import numpy as np

EXIT_SOLVER = 1
EXIT_CONFIG = 2


class ConfigError(ValueError):
    pass


RUN_KEYS = ("command", "p", "mask", "box", "h", "cells", "objective", "seed", "out", "threads", "method", "start")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="plapspec", description="Dirichlet eigenvalues of the discrete p-Laplacian on grid masks.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("eig", "first and second eigenvalues, writes report.json"),
        ("flow", "minimizing-movement flow, writes trace.csv and report.json"),
        ("path", "mountain-pass path, writes path.csv and report.json"),
        ("shape", "volume-constrained shape optimization, writes mask.txt, log.csv and report.json"),
        ("oracle", "print closed-form reference values"),
    ]:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="INI file with a [run] section and optional solver sections")
        sp.add_argument("--p", type=float, help="exponent, 1 < p < inf")
        sp.add_argument("--mask", help="mask file (see README for the format)")
        sp.add_argument("--box", help="full box WxH (2D) or N (1D)")
        sp.add_argument("--h", type=float, help="grid spacing (default 1/(rows+1))")
        sp.add_argument("--cells", type=int, help="cell budget for shape")
        sp.add_argument("--objective", help="lambda1, lambda2 or weighted:a,b")
        sp.add_argument("--seed", type=int, help="random seed (default 0)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, help="worker cap; 1 is fully sequential")
        sp.add_argument("--method", choices=["minimax", "linear"], help="second-eigenvalue method for eig")
        sp.add_argument("--start", choices=["second", "random"], help="initial field for flow")
    return ap


def _read_config(path):
    cp = configparser.ConfigParser()
    if not Path(path).is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return cp


def _coerce(value: str, like):
    if isinstance(like, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float) or like is None:
        return None if value.lower() == "none" else float(value)
    return value


def _override(obj, section):
    names = {f.name: f for f in dataclasses.fields(obj)}
    for key, raw in section.items():
        if key not in names:
            raise ConfigError(f"unknown option {key!r} for {type(obj).__name__}")
        cur = getattr(obj, key)
        if dataclasses.is_dataclass(cur):
            raise ConfigError(f"option {key!r} is a group; use its own section")
        try:
            setattr(obj, key, _coerce(raw, cur))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    if hasattr(obj, "__post_init__"):
        try:
            obj.__post_init__()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def resolve(args) -> dict:
    """Merge config file and flags into one settings dict (flags win)."""
    cfg = {"seed": 0, "threads": 1, "out": ".", "method": "minimax", "start": "second", "objective": "lambda2"}
    sections = {}
    if args.config:
        cp = _read_config(args.config)
        if cp.has_section("run"):
            for k, v in cp.items("run"):
                if k not in RUN_KEYS:
                    raise ConfigError(f"unknown [run] key {k!r}")
                cfg[k] = v
        for s in ("eig", "flow", "path", "shape"):
            if cp.has_section(s):
                sections[s] = dict(cp.items(s))
        unknown = set(cp.sections()) - {"run", "eig", "flow", "path", "shape"}
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
        base = Path(args.config).parent
        if "mask" in cfg and not Path(cfg["mask"]).is_absolute():
            cfg["mask"] = str(base / cfg["mask"])
    if cfg.get("command", args.command) != args.command:
        raise ConfigError(f"config is for {cfg['command']!r}, not {args.command!r}")
    cfg["command"] = args.command
    for k in RUN_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    try:
        for k, typ in (("p", float), ("h", float), ("cells", int), ("seed", int), ("threads", int)):
            if k in cfg and cfg[k] is not None:
                cfg[k] = typ(cfg[k])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if "p" not in cfg:
        raise ConfigError("missing exponent: pass --p or set p in [run]")
    if not 1.0 < cfg["p"] < np.inf:
        raise ConfigError(f"exponent must satisfy 1 < p < inf, got {cfg['p']}")
    if cfg["threads"] < 1:
        raise ConfigError("threads must be >= 1")
    cfg["sections"] = sections
    return cfg


def _domain(cfg):
    from .grid import GridDomain, read_mask

    if cfg.get("mask"):
        if not Path(cfg["mask"]).is_file():
            raise ConfigError(f"mask file not found: {cfg['mask']}")
        try:
            dom = read_mask(cfg["mask"])
        except ValueError as exc:
            raise ConfigError(f"bad mask file: {exc}") from exc
        if cfg.get("h") is not None:
            dom = GridDomain(dom.mask, cfg["h"])
        return dom
    if cfg.get("box"):
        try:
            parts = [int(x) for x in str(cfg["box"]).lower().split("x")]
        except ValueError as exc:
            raise ConfigError(f"bad box spec {cfg['box']!r}") from exc
        if len(parts) == 1:
            return GridDomain.interval(parts[0], cfg.get("h"))
        if len(parts) != 2 or min(parts) < 1:
            raise ConfigError(f"bad box spec {cfg['box']!r}")
        w, hgt = parts
        return GridDomain.box((hgt, w), cfg.get("h"))
    raise ConfigError("no domain: pass --mask or --box")


def _options(cfg):
    from .flow import FlowOptions
    from .minimax import PathOptions
    from .shapeopt import ShapeOptions
    from .spectrum import EigenOptions

    eig = EigenOptions(seed=cfg["seed"], threads=cfg["threads"])
    flow = FlowOptions()
    path = PathOptions(flow=flow)
    shape = ShapeOptions(seed=cfg["seed"], threads=cfg["threads"], eig=eig)
    for name, obj in (("eig", eig), ("flow", flow), ("path", path), ("shape", shape)):
        if name in cfg["sections"]:
            _override(obj, cfg["sections"][name])
    return eig, flow, path, shape


def _settings(cfg, *objs) -> dict:
    out = {k: cfg.get(k) for k in RUN_KEYS if k != "out"}
    for o in objs:
        d = dataclasses.asdict(o)
        out[type(o).__name__] = d
    return out


def _write(out: Path, name: str, text: str):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def cmd_eig(cfg, out):
    from .spectrum import dumps, lambda2

    dom = _domain(cfg)
    eig, _, path, _ = _options(cfg)
    rep = lambda2(dom, cfg["p"], eig, path, method=cfg["method"])
    doc = {"command": "eig", "settings": _settings(cfg, eig, path)}
    doc.update(rep.to_dict())
    _write(out, "report.json", dumps(doc))
    print(f"lambda1 = {rep.lambda1:.12g}")
    print(f"lambda2 = {rep.lambda2:.12g}")


def _start_field(dom, cfg):
    from .calculus import normalize
    from .grid import Field
    from .minimax import trial_field

    if cfg["start"] == "random":
        x = np.random.default_rng(cfg["seed"]).standard_normal(dom.n_active)
    else:
        x = np.maximum(trial_field(dom), 0.0)
    return normalize(Field(dom, x), cfg["p"])


def cmd_flow(cfg, out):
    from .flow import dissipation_check, holder_check, run_flow
    from .spectrum import dumps

    dom = _domain(cfg)
    eig, flow, _, _ = _options(cfg)
    tr = run_flow(_start_field(dom, cfg), cfg["p"], flow)
    _write(out, "trace.csv", tr.to_csv())
    doc = {
        "command": "flow",
        "settings": _settings(cfg, flow),
        "status": tr.status,
        "steps": len(tr) - 1,
        "initial_energy": tr.energies[0],
        "terminal_energy": tr.energies[-1],
        "terminal_sigma": tr.sigmas[-1],
        "terminal_residual": tr.terminal_residual(),
        "holder_bound": holder_check(tr, cfg["p"]),
        "dissipation_bound": dissipation_check(tr, cfg["p"]),
    }
    _write(out, "report.json", dumps(doc))
    print(f"terminal energy = {tr.energies[-1]:.12g} ({tr.status}, {len(tr) - 1} steps)")
    return 0 if tr.status == "converged" else EXIT_SOLVER


def cmd_path(cfg, out):
    from .minimax import lambda2_minimax, path_max_energy
    from .spectrum import dumps, is_simple, per_component_lambda1

    dom = _domain(cfg)
    eig, _, path, _ = _options(cfg)
    table = per_component_lambda1(dom, cfg["p"], eig)
    if not is_simple(dom, cfg["p"], eig, table):
        raise ConfigError("the first eigenvalue of this mask is not simple; use eig instead")
    res = lambda2_minimax(dom, cfg["p"], eig, path, table=table)
    _write(out, "path.csv", res.path.to_csv(cfg["p"]))
    mx, k = path_max_energy(res.path, cfg["p"])
    doc = {
        "command": "path",
        "settings": _settings(cfg, eig, path),
        "lambda2": res.lam,
        "branch": res.branch,
        "argmax_node": k,
        "argmax_piece": res.path.piece_of(k),
        "residual2": res.residual,
        "candidates": res.candidates,
        "warnings": res.warnings,
        "sweeps": len(res.path.history),
    }
    _write(out, "report.json", dumps(doc))
    print(f"lambda2 = {res.lam:.12g} (branch {res.branch})")


def cmd_shape(cfg, out):
    from .grid import format_mask
    from .shapeopt import ShapeObjective, component_sizes, optimize_shape
    from .spectrum import dumps

    dom = _domain(cfg)
    eig, _, _, shape = _options(cfg)
    if cfg.get("cells") is None:
        raise ConfigError("shape needs a cell budget (--cells)")
    try:
        obj = ShapeObjective.parse(cfg["objective"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not 1 <= cfg["cells"] <= dom.n_active:
        raise ConfigError(f"cell budget {cfg['cells']} outside [1, {dom.n_active}]")
    best, rep, state = optimize_shape(dom, cfg["cells"], obj, cfg["p"], shape)
    _write(out, "mask.txt", format_mask(best))
    _write(out, "log.csv", state.to_csv())
    doc = {
        "command": "shape",
        "settings": _settings(cfg, shape),
        "objective": obj(rep.lambda1, rep.lambda2),
        "component_cells": component_sizes(best),
        "iterations": state.iteration,
    }
    doc.update(rep.to_dict())
    _write(out, "report.json", dumps(doc))
    print(f"objective = {doc['objective']:.12g}, components {doc['component_cells']}")


def cmd_oracle(cfg, out):
    from .reference import interval_eigs, pi_p

    p = cfg["p"]
    print(f"pi_p = {pi_p(p).value:.15g}")
    print(f"lambda1(0,1) = {interval_eigs(1.0, p, 1).value:.15g}")
    print(f"lambda2(0,1) = {interval_eigs(1.0, p, 2).value:.15g}")
    if cfg.get("mask") or cfg.get("box"):
        from .reference import stencil_eigs_p2

        dom = _domain(cfg)
        if p != 2.0:
            raise ConfigError("stencil oracle values exist for p = 2 only")
        print(f"stencil lambda1 = {stencil_eigs_p2(dom, 1).value:.15g}")
        if dom.n_active > 1:
            print(f"stencil lambda2 = {stencil_eigs_p2(dom, 2).value:.15g}")


COMMANDS = {"eig": cmd_eig, "flow": cmd_flow, "path": cmd_path, "shape": cmd_shape, "oracle": cmd_oracle}


def main(argv=None) -> int:
    from .minimax import PathError
    from .solver import ConvergenceError

    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = resolve(args)
        status = COMMANDS[args.command](cfg, Path(cfg["out"])) or 0
    except ConfigError as exc:
        print(f"plapspec: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, PathError, ArithmeticError) as exc:
        print(f"plapspec: solver failure: {exc}", file=sys.stderr)
        diag = getattr(exc, "diagnostics", None)
        if diag:
            for k, v in diag.items():
                print(f"  {k}: {v}", file=sys.stderr)
        return EXIT_SOLVER
    return status


if __name__ == "__main__":
    sys.exit(main())
