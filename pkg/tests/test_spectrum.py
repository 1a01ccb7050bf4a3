import json

import numpy as np
import pytest

from plapspec.calculus import eigen_residual, lp_norm, rayleigh
from plapspec.grid import Field, GridDomain, components
from plapspec.reference import digital_disk, interval_eigs, stencil_eigs_p2
from plapspec.solver import ConvergenceError
from plapspec.spectrum import (
    EigenOptions,
    SpectralReport,
    dumps,
    is_simple,
    lambda1,
    lambda2,
    per_component_lambda1,
    solve_from,
)

from conftest import two_intervals


def stencil_1d(n, k=1):
    h = 1 / (n + 1)
    return 4 / h**2 * np.sin(k * np.pi * h / 2) ** 2


def check_pair(pair, p, tol=1e-8):
    assert lp_norm(pair.u, p) == pytest.approx(1.0, abs=1e-10)
    assert rayleigh(pair.u, p) == pytest.approx(pair.lam, rel=1e-8)
    assert pair.residual <= tol
    assert pair.u.values.min() >= -1e-12


def test_lambda1_1d_stencil_value():
    n = 512
    pair = lambda1(GridDomain.interval(n), 2)
    assert abs(pair.lam - stencil_1d(n)) <= 1e-8
    check_pair(pair, 2)


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_lambda1_general_p_invariants(p):
    pair = lambda1(GridDomain.interval(63), p)
    check_pair(pair, p)
    assert pair.lam == pytest.approx(interval_eigs(1.0, p).value, rel=2e-2)


def test_lambda1_two_equal_components():
    m = np.zeros(41, dtype=bool)
    m[:20] = True
    m[21:] = True
    dom = GridDomain(m, 1 / 21)
    pair = lambda1(dom, 2)
    single = lambda1(GridDomain.interval(20, 1 / 21), 2)
    assert pair.lam == pytest.approx(single.lam, rel=1e-10)
    support = pair.u.full() != 0
    assert support[:20].all() != support[21:].any()
    assert len(pair.component_support) == 1


def test_lambda1_square():
    pair = lambda1(GridDomain.box((128, 128)), 2)
    assert pair.lam == pytest.approx(2 * np.pi**2, rel=1e-2)


def test_per_component_two_intervals():
    dom = two_intervals()
    table = per_component_lambda1(dom, 2)
    vals = sorted(c.pair.lam for c in table)
    assert vals[0] == pytest.approx(np.pi**2, rel=1e-2)
    assert vals[1] == pytest.approx(np.pi**2 / 0.36, rel=1e-2)
    assert lambda1(dom, 2, table=table).lam == pytest.approx(min(vals), rel=1e-8)


def test_per_component_single_component():
    dom = GridDomain.box((9, 7))
    table = per_component_lambda1(dom, 3)
    assert len(table) == 1
    assert table[0].pair.lam == pytest.approx(lambda1(dom, 3).lam, rel=1e-12)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_one_cell_component(p):
    m = np.zeros((5, 5), dtype=bool)
    m[2, 2] = True
    dom = GridDomain(m, 0.25)
    table = per_component_lambda1(dom, p)
    onehot = Field(dom, [1.0])
    assert table[0].pair.lam == pytest.approx(rayleigh(onehot, p), rel=1e-12)
    assert table[0].pair.lam == pytest.approx(2 * 2 / 0.25**p, rel=1e-12)


def test_is_simple_examples():
    assert is_simple(GridDomain.box((6, 9)), 2)
    m = np.zeros((5, 11), dtype=bool)
    m[:, :5] = True
    m[:, 6:] = True
    assert not is_simple(GridDomain(m, 0.1), 2)


def test_is_simple_near_tie_documented():
    # intervals of length 1 and 0.999: relative gap 1/0.999^2 - 1 ~ 2e-3 >> 1e-6
    n = 1999
    h = 1 / (n + 1)
    short = round(0.999 / h) - 1
    m = np.zeros(n + 1 + short, dtype=bool)
    m[:n] = True
    m[n + 1 :] = True
    dom = GridDomain(m, h)
    table = per_component_lambda1(dom, 2)
    gap = abs(table[1].pair.lam / table[0].pair.lam - 1)
    assert gap == pytest.approx(1 / 0.999**2 - 1, rel=0.05)
    assert is_simple(dom, 2, table=table)


def test_lambda2_two_identical_components():
    m = np.zeros((5, 11), dtype=bool)
    m[:, :5] = True
    m[:, 6:] = True
    rep = lambda2(GridDomain(m, 0.1), 2)
    assert not rep.simple1
    assert rep.lambda2 == rep.lambda1


def test_lambda2_ratio_1d_p2():
    rep = lambda2(GridDomain.interval(255), 2)
    assert rep.lambda2 / rep.lambda1 == pytest.approx(4.0, rel=1e-2)
    assert eigen_residual(rep.u2, rep.lambda2, 2) <= 1e-8


def test_lambda2_two_intervals():
    rep = lambda2(two_intervals(), 2)
    assert rep.lambda2 == pytest.approx(np.pi**2 / 0.36, rel=1e-2)
    assert rep.lambda2 < 4 * np.pi**2
    assert rep.diagnostics["branch"] == "disjoint"


def test_lambda2_linear_method_matches_oracle():
    dom = GridDomain(np.random.default_rng(2).random((12, 12)) < 0.8, 1 / 13)
    lab = components(dom)
    rep = lambda2(dom, 2, method="linear")
    assert rep.lambda2 == pytest.approx(stencil_eigs_p2(dom, 2).value, rel=1e-8) or lab.count > 1
    with pytest.raises(ValueError):
        lambda2(GridDomain.interval(9), 3, method="linear")


def test_report_invariant_and_json():
    rep = lambda2(GridDomain.interval(31), 2)
    text = rep.to_json()
    doc = json.loads(text)
    assert list(doc)[:3] == ["lambda1", "lambda2", "simple1"]
    assert doc["lambda1"] == rep.lambda1
    assert format(rep.lambda1, ".17g") in text
    with pytest.raises(ValueError):
        SpectralReport(2.0, 1.0, rep.u1, rep.u2, True)


def test_dumps_format():
    assert dumps({"a": 0.1, "b": [1, True, None], "c": {}}) == '{\n  "a": 0.10000000000000001,\n  "b": [\n    1,\n    true,\n    null\n  ],\n  "c": {}\n}\n'


def test_minimum_principle_per_component():
    r = np.random.default_rng(9)
    for _ in range(5):
        dom = GridDomain(r.random((10, 10)) < 0.65, 0.1)
        pair = lambda1(dom, 2)
        lab = components(dom)
        vals = np.abs(pair.u.values)
        for k in range(lab.count):
            v = vals[lab.labels == k]
            assert np.all(v > 1e-10) or np.all(v <= 1e-10)


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_restart_stability(p):
    dom = GridDomain.box((9, 11))
    opts = EigenOptions(tol=1e-9)
    ref = lambda1(dom, p, opts)
    r = np.random.default_rng(0)
    for _ in range(10):
        pair = solve_from(dom, r.standard_normal(dom.n_active), p, opts)
        assert pair.residual <= 1e-9
        assert lp_norm(pair.u - ref.u, p) <= 1e-6


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_domain_monotonicity_lambda1(p):
    r = np.random.default_rng(21)
    for _ in range(4):
        big = r.random((9, 9)) < 0.9
        small = big & (r.random((9, 9)) < 0.85)
        if not small.any():
            continue
        la = lambda1(GridDomain(small, 0.1), p).lam
        lb = lambda1(GridDomain(big, 0.1), p).lam
        assert lb <= la + 1e-8 * la


def test_lower_bound_minimized_by_disk():
    shape = (30, 30)
    cells = 300
    h = 1 / 31
    r = np.random.default_rng(4)
    values = {}
    disk = digital_disk(shape, cells, (14.5, 14.5))
    values["disk"] = lambda1(GridDomain(disk, h), 2).lam * (cells * h * h)
    for k in range(8):
        a = r.uniform(1.2, 3.0)
        yy, xx = np.indices(shape)
        d2 = ((yy - 14.5) * a) ** 2 + ((xx - 14.5) / a) ** 2
        m = np.zeros(shape[0] * shape[1], bool)
        m[np.argsort(d2.ravel(), kind="stable")[:cells]] = True
        values[f"ellipse{k}"] = lambda1(GridDomain(m.reshape(shape), h), 2).lam * (cells * h * h)
    for k in range(4):
        w = r.integers(12, 25)
        m = np.zeros(shape, bool)
        m[:, :] = False
        rows = cells // w
        m[:rows, :w] = True
        m[rows, : cells - rows * w] = True
        values[f"rect{k}"] = lambda1(GridDomain(m, h), 2).lam * (cells * h * h)
    lo = min(values.values())
    assert lo > 0
    assert values["disk"] <= lo * 1.02


def test_nonconvergence_raises():
    with pytest.raises(ConvergenceError) as exc:
        lambda1(GridDomain.box((20, 20)), 3, EigenOptions(max_iters=2, restarts=0))
    assert exc.value.diagnostics["status"] in ("max_iters", "stalled")
