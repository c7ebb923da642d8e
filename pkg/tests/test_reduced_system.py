import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from impulsive_mfc.fields import LinearField, ProblemSpec, TanhCost, ZeroCost, ZeroField, ConstantField
from impulsive_mfc.measures import EmpiricalMeasure, support_radius, w1_distance
from impulsive_mfc.reduced_system import (
    ConstraintError,
    IntegrationError,
    PiecewiseControl,
    ReducedControl,
    embed_control,
    impulsive_limit_control,
    saturate_budget,
    solve_forward,
    solve_original,
    state_at,
    terminal_cost,
)

from conftest import linear_decay1d, shift1d, smooth1d


@st.composite
def piecewise_controls(draw, m=1, max_pieces=5):
    k = draw(st.integers(1, max_pieces))
    durations = draw(st.lists(st.floats(0.05, 1.0), min_size=k, max_size=k))
    values = draw(st.lists(st.lists(st.floats(-3, 3), min_size=m, max_size=m), min_size=k, max_size=k))
    return PiecewiseControl(np.concatenate([[0.0], np.cumsum(durations)]), values)


# controls -----------------------------------------------------------------


def test_reduced_control_checks():
    good = ReducedControl(2.0, [1.0, 0.0], [[0.0], [-1.0]])
    good.check(1.0)
    with pytest.raises(ConstraintError):
        ReducedControl(2.0, [1.0, 0.5], [[0.0], [0.6]]).check(1.5)
    with pytest.raises(ConstraintError):
        ReducedControl(2.0, [-0.1, 1.0], [[0.0], [0.0]]).check(0.9)
    with pytest.raises(ConstraintError):
        ReducedControl(2.0, [1.0, 1.0], [[0.0], [0.0]]).check(1.0)
    with pytest.raises(ConstraintError):
        ReducedControl(2.0, [1.0, 1.0], [[0.0]])


def test_reduced_control_csv_roundtrip(rng):
    c = ReducedControl(3.0, rng.uniform(0, 0.5, 7), rng.uniform(-0.25, 0.25, (7, 2)))
    back = ReducedControl.from_csv(c.to_csv())
    assert back.S == pytest.approx(3.0, abs=1e-14)
    assert np.array_equal(back.alpha, c.alpha) and np.array_equal(back.beta, c.beta)
    assert c.to_csv().splitlines()[0] == "cell,s_mid,alpha,beta1,beta2"


def test_combine_keeps_admissibility():
    a = ReducedControl.uniform(1.0, 1.0, 4, 1)
    b = ReducedControl(2.0, [1.0, 1.0, 0.0, 0.0], [[0.0], [0.0], [1.0], [-1.0]])
    for tau in (0.0, 0.3, 1.0):
        assert a.combine(b, tau).is_admissible(1.0)


# embedding ----------------------------------------------------------------


@pytest.mark.parametrize("c", [0.5, 1.0, 3.0])
def test_embed_constant_control(c):
    T = 1.5
    ctrl = embed_control(PiecewiseControl.constant(T, [c]), c * T, 60)
    assert np.allclose(ctrl.alpha, 1 / (1 + c), atol=1e-14)
    assert np.allclose(ctrl.beta[:, 0], c / (1 + c), atol=1e-14)


def test_embed_zero_stretch_gives_pure_drift():
    u = PiecewiseControl([0.0, 1.0, 2.0], [[2.0], [0.0]])
    ctrl = embed_control(u, 2.0, 40)
    # image of [0, 1] is [0, 3]; the zero piece maps to [3, 4]
    tail = ctrl.midpoints > 3.0
    assert np.allclose(ctrl.alpha[tail], 1.0) and np.allclose(ctrl.beta[tail], 0.0)


@given(piecewise_controls(m=2), st.integers(3, 200))
def test_embedding_is_admissible_and_saturated(u, cells):
    ctrl = embed_control(u, u.total_variation(), cells)
    ctrl.check(u.T)
    assert np.all(ctrl.alpha > 0)
    assert np.all(ctrl.intensity <= 1.0 + 1e-12)
    # averaging across a sign change of beta lowers |beta|; cells inside one piece are saturated
    edges = np.cumsum(u.durations * (1 + np.abs(u.values).sum(axis=1)))[:-1]
    lo, hi = ctrl.grid[:-1], ctrl.grid[1:]
    inside = ~np.any((edges[None, :] > lo[:, None]) & (edges[None, :] < hi[:, None]), axis=1)
    assert np.allclose(ctrl.intensity[inside], 1.0, atol=1e-12)


def test_embed_budget_mismatch():
    u = PiecewiseControl.constant(1.0, [1.0])
    with pytest.raises(ConstraintError):
        embed_control(u, 2.0, 10)
    with pytest.raises(ConstraintError):
        embed_control(u, 0.5, 10)
    slack = embed_control(u, 2.0, 30, allow_slack=True)
    slack.check(1.0)
    assert np.allclose(slack.alpha[-10:], 0.0) and np.allclose(slack.beta[-10:], 0.0)


# budget saturation ----------------------------------------------------------


def test_saturate_budget_example():
    uk = saturate_budget(PiecewiseControl.constant(1.0, [0.0]), 1.0, 2)
    assert uk(0.1)[0] == 2.0 and uk(0.3)[0] == -2.0 and uk(0.7)[0] == 0.0
    assert uk.total_variation() == pytest.approx(1.0, abs=1e-15)


def test_saturate_budget_already_spent():
    u = PiecewiseControl.constant(2.0, [0.5])
    assert saturate_budget(u, 1.0, 8) is u
    with pytest.raises(ConstraintError):
        saturate_budget(u, 0.5, 8)


@given(st.integers(1, 64), st.floats(0.1, 3.0), st.floats(-1.0, 1.0))
def test_saturate_budget_pulses_cancel(k, M, tail):
    u = PiecewiseControl([0.0, 1.0, 2.0], [[0.0], [tail * M / 2]])
    uk = saturate_budget(u, M, k)
    assert uk.cumulative(2.0)[0] == pytest.approx(u.cumulative(2.0)[0], abs=1e-12)
    assert uk.total_variation() == pytest.approx(M, rel=1e-12)


def test_impulsive_limit_control_is_admissible():
    u = PiecewiseControl.constant(1.0, [0.0])
    ctrl = impulsive_limit_control(u, 1.0, 200)
    ctrl.check(1.0)
    assert np.allclose(ctrl.alpha[:100], 0.0)
    assert np.allclose(ctrl.beta[:50, 0], 1.0) and np.allclose(ctrl.beta[50:100, 0], -1.0)


# forward solve --------------------------------------------------------------


def test_forward_constant_field_is_exact():
    spec = ProblemSpec(ZeroField(1), [ConstantField([1.0])], ZeroField(1), TanhCost(1), 1.0, 1.0,
                       EmpiricalMeasure([-1.0, 0.0, 2.0]))
    b = 0.4
    ctrl = ReducedControl(2.0, np.full(50, 0.5), np.full((50, 1), b))
    traj = solve_forward(spec, ctrl)
    assert np.allclose(traj.states[-1, :, 0], np.array([-1.0, 0.0, 2.0]) + b * 2.0, atol=1e-14)


def test_forward_linear_decay_matches_closed_form():
    spec = linear_decay1d(x0=(1.0, -0.5), T=1.0, M=1.0)
    errs = []
    for cells in (20, 40):
        traj = solve_forward(spec, ReducedControl.uniform(1.0, 1.0, cells, 1))
        errs.append(np.max(np.abs(traj.states[-1, :, 0] - np.array([1.0, -0.5]) * math.exp(-1.0))))
    assert errs[1] < 1e-8
    assert errs[0] / errs[1] == pytest.approx(16, rel=0.1)


def test_forward_permutation_equivariance(rng):
    spec = smooth1d(N=8)
    perm = rng.permutation(8)
    other = spec.with_theta(EmpiricalMeasure(spec.theta.points[perm]))
    ctrl = ReducedControl(2.0, np.linspace(0.2, 0.8, 40), np.full((40, 1), 0.15))
    a, b = solve_forward(spec, ctrl), solve_forward(other, ctrl)
    assert np.allclose(a.states[:, perm], b.states, rtol=0, atol=1e-14)


def test_grid_convergence_fourth_order():
    spec = smooth1d(N=6)
    base = PiecewiseControl.constant(1.0, [1.0])
    costs = [terminal_cost(spec, solve_forward(spec, embed_control(base, 1.0, c))) for c in (25, 50, 100)]
    ratio = (costs[0] - costs[1]) / (costs[1] - costs[2])
    assert ratio == pytest.approx(16, rel=0.15)


def test_forward_raises_on_blowup():
    spec = ProblemSpec(LinearField([[1e5]]), [ConstantField([1.0])], ZeroField(1), ZeroCost(1), 1.0, 1.0,
                       EmpiricalMeasure([1.0]))
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(IntegrationError, match="cell"):
            solve_forward(spec, ReducedControl.uniform(1.0, 1.0, 400, 1))


def test_mass_conservation_and_workers():
    spec = smooth1d(N=12)
    ctrl = ReducedControl.uniform(1.0, 1.0, 30, 1)
    a, b = solve_forward(spec, ctrl), solve_forward(spec, ctrl, workers=3)
    assert a.states.shape == (31, 12, 1)
    assert np.array_equal(a.states, b.states)


def test_terminal_cost_examples():
    spec = shift1d()
    traj = solve_forward(spec, ReducedControl.uniform(1.0, 1.0, 4, 1))
    assert terminal_cost(spec, traj) == 0.0
    two = spec.with_theta(EmpiricalMeasure([-1.0, 1.0]))
    assert terminal_cost(two, solve_forward(two, ReducedControl.uniform(1.0, 1.0, 4, 1))) == pytest.approx(0.0, abs=1e-16)
    zero = ProblemSpec(ZeroField(1), [ConstantField([1.0])], ZeroField(1), ZeroCost(1), 1.0, 1.0, EmpiricalMeasure([0.3]))
    assert terminal_cost(zero, solve_forward(zero, ReducedControl.uniform(1.0, 1.0, 4, 1))) == 0.0


def test_state_at_hits_nodes_and_interpolates():
    spec = smooth1d(N=4)
    ctrl = ReducedControl.uniform(1.0, 1.0, 20, 1)
    traj = solve_forward(spec, ctrl)
    assert np.array_equal(state_at(spec, ctrl, traj, ctrl.grid[7]), traj.states[7])
    fine = solve_forward(spec, ReducedControl.uniform(1.0, 1.0, 320, 1))
    # both sides carry the O(ds^4) global error of the coarse grid
    assert np.allclose(state_at(spec, ctrl, traj, ctrl.grid[7] + 0.5 * ctrl.ds), fine.states[120], atol=1e-5)


def test_solve_original_matches_reduced_for_constant_control():
    c = 0.8
    spec = smooth1d(N=5, M=c)
    u = PiecewiseControl.constant(1.0, [c])
    direct = solve_original(spec, u, max_step=1e-3)
    reduced = solve_forward(spec, embed_control(u, c, 400))
    assert w1_distance(direct.terminal, reduced.terminal) < 1e-9


def test_support_radius_bound():
    spec = smooth1d(N=10)
    ctrl = ReducedControl(2.0, np.full(40, 0.5), np.full((40, 1), -0.5))
    traj = solve_forward(spec, ctrl)
    r, C, S = support_radius(spec.theta), spec.C, spec.S
    bound = r * math.exp(C * S) * math.exp(C * math.exp(C * S) * S)
    assert max(support_radius(traj.measure(j)) for j in range(41)) <= bound
