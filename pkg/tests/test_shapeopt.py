import numpy as np
import pytest

from plapspec.grid import GridDomain, components
from plapspec.reference import disk_sweep, stencil_eigs_p2
from plapspec.shapeopt import (
    InfeasibleBudget,
    ShapeObjective,
    ShapeOptions,
    ShapeRunState,
    component_sizes,
    evaluate,
    optimize_shape,
    threshold_step,
)
from plapspec.spectrum import EigenOptions


def make_state(box, sel, objective, p=2.0, seed=0):
    ev = evaluate(box, sel, objective, p, EigenOptions())
    return ShapeRunState(box, int(sel.sum()), objective, p, ev, seed=seed)


def test_full_budget_returns_box():
    box = GridDomain.box((6, 10))
    dom, rep, state = optimize_shape(box, box.n_active, ShapeObjective.lambda2(), 2)
    assert dom.mask.all()
    assert rep.lambda1 == pytest.approx(stencil_eigs_p2(box, 1).value, rel=1e-8)
    assert rep.lambda2 == pytest.approx(stencil_eigs_p2(box, 2).value, rel=1e-8)
    assert len(state.log) == 1


@pytest.mark.parametrize("c", [0, 61, -3])
def test_infeasible_budget(c):
    with pytest.raises(InfeasibleBudget):
        optimize_shape(GridDomain.box((6, 10)), c, ShapeObjective.lambda1(), 2)


def test_objective_kinds():
    assert ShapeObjective.lambda1()(3.0, 5.0) == 3.0
    assert ShapeObjective.lambda2()(3.0, 5.0) == 5.0
    assert ShapeObjective.parse("weighted:2,0.5")(3.0, 4.0) == 8.0
    tab = ShapeObjective.tabulated([0, 10], [0, 10], [[0, 1], [2, 3]])
    assert tab(5.0, 5.0) == pytest.approx(1.5)
    assert tab.uses_lambda2
    with pytest.raises(ValueError):
        ShapeObjective.tabulated([0, 10], [0, 10], [[1, 0], [2, 3]])
    with pytest.raises(ValueError):
        ShapeObjective.weighted(-1, 1)
    with pytest.raises(ValueError):
        ShapeObjective.parse("lambda3")


def test_threshold_step_local_optimum_unchanged():
    # every contiguous run of c cells in a row has the same first eigenvalue
    box = GridDomain.interval(30)
    sel = np.zeros(30, dtype=bool)
    sel[10:20] = True
    state = make_state(box, sel, ShapeObjective.lambda1())
    f0 = state.current.f
    threshold_step(state)
    assert np.array_equal(state.current.mask, sel)
    assert state.current.f == f0


def test_threshold_step_drops_dead_cell():
    box = GridDomain.box((12, 12))
    g = np.zeros(box.shape, dtype=bool)
    g[2:8, 2:8] = True
    g[10, 10] = True
    sel = g[box.mask]
    state = make_state(box, sel, ShapeObjective.lambda1())
    dead = box.index[10, 10]
    assert state.current.u1[dead] == 0
    threshold_step(state)
    assert not state.current.mask[dead]
    assert state.current.mask.sum() == sel.sum()
    assert state.current.f < make_state(box, sel, ShapeObjective.lambda1()).current.f


def test_log_non_increasing_and_budget():
    box = GridDomain.box((12, 20))
    dom, rep, state = optimize_shape(box, 96, ShapeObjective.lambda2(), 2, ShapeOptions(seed=3))
    accepted = [f for (_, _, _, f, ok) in state.log if ok]
    assert np.all(np.diff(accepted) <= 0)
    assert int(dom.mask.sum()) == 96
    assert rep.lambda2 == pytest.approx(accepted[-1], rel=1e-8)
    assert accepted[-1] <= accepted[0]


def test_lambda1_blob_against_disk_family():
    box = GridDomain.box((16, 24))
    c = int(0.6 * box.n_active)
    dom, rep, _ = optimize_shape(box, c, ShapeObjective.lambda1(), 2)
    assert components(dom).count == 1
    oracle = disk_sweep(box.shape, c, box.h).value
    assert rep.lambda1 <= 1.05 * oracle


def test_lambda2_two_components():
    box = GridDomain.box((16, 32))
    c = box.n_active // 2
    dom, rep, _ = optimize_shape(box, c, ShapeObjective.lambda2(), 2)
    sizes = component_sizes(dom)
    assert len(sizes) == 2
    assert all(abs(s - c / 2) <= 0.1 * c / 2 for s in sizes)


def test_monotone_in_budget():
    box = GridDomain.box((14, 14))
    vals = [optimize_shape(box, c, ShapeObjective.lambda1(), 2)[1].lambda1 for c in (40, 70, 100, 140)]
    assert all(b <= a * (1 + 1e-8) for a, b in zip(vals, vals[1:]))


def test_deterministic_given_seed():
    box = GridDomain.box((10, 16))
    runs = [optimize_shape(box, 64, ShapeObjective.weighted(1, 1), 2, ShapeOptions(seed=7)) for _ in range(2)]
    assert np.array_equal(runs[0][0].mask, runs[1][0].mask)
    assert runs[0][2].to_csv() == runs[1][2].to_csv()


def test_run_log_csv():
    box = GridDomain.box((8, 12))
    _, _, state = optimize_shape(box, 40, ShapeObjective.lambda1(), 2, ShapeOptions(seed=11))
    lines = state.to_csv().splitlines()
    assert lines[0] == "# seed=11 cells=40 p=2.0"
    assert lines[1] == "iteration,lambda1,lambda2,f,accepted"
    assert len(lines) == len(state.log) + 2


def test_general_p_small():
    box = GridDomain.box((6, 8))
    dom, rep, state = optimize_shape(box, 20, ShapeObjective.lambda1(), 3, ShapeOptions(max_iters=5))
    assert int(dom.mask.sum()) == 20
    assert rep.lambda1 == pytest.approx(min(f for (_, _, _, f, ok) in state.log if ok), rel=1e-6)
