import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from impulsive_mfc.hamiltonian import CellHamiltonian
from impulsive_mfc.optimizer import (
    FWOptions,
    best_response,
    constrained_best_response,
    evaluate,
    find_lambda,
    frank_wolfe,
    fw_gap,
    pmp_residual,
    residual_from_cells,
    time_mass,
)
from impulsive_mfc.reduced_system import ReducedControl, solve_forward, terminal_cost
from impulsive_mfc.time_change import project_to_impulsive

from conftest import planar, shift1d, smooth1d


def cells_of(h0, h, S=2.0):
    h0 = np.asarray(h0, dtype=float)
    return CellHamiltonian(h0, np.asarray(h, dtype=float).reshape(h0.size, -1), S / h0.size)


def test_best_response_examples():
    drift = best_response(cells_of([1.0], [[1.0]]), 1.0)
    assert drift.alpha[0] == 1.0 and drift.beta[0, 0] == 0.0
    jump = best_response(cells_of([-1.0], [[-3.0]]), 1.0)
    assert jump.alpha[0] == 0.0 and jump.beta[0, 0] == -1.0
    tie = best_response(cells_of([0.5], [[1.0]]), 0.5)
    assert tie.alpha[0] == 1.0 and tie.beta[0, 0] == 0.0


def test_best_response_lowest_index_and_positive_sign_on_zero():
    br = best_response(cells_of([0.0], [[2.0, -2.0]]), -5.0)
    assert br.beta[0].tolist() == [1.0, 0.0]
    zero = best_response(cells_of([-1.0], [[0.0, 0.0]]), 0.0)
    assert zero.alpha[0] == 0.0 and zero.beta[0].tolist() == [1.0, 0.0]


def test_find_lambda_constant_tie():
    c = 0.7
    hc = cells_of(np.zeros(40), np.full(40, -c))
    search = find_lambda(hc, 1.0, tie_rule="uniform")
    assert search.lam == pytest.approx(c) and search.degenerate
    assert np.allclose(search.alpha, 0.5)


def test_find_lambda_drift_only_tie():
    hc = cells_of(np.ones(40), np.zeros(40))
    search = find_lambda(hc, 1.0, tie_rule="uniform")
    assert search.lam == pytest.approx(-1.0)
    assert np.allclose(search.alpha, 0.5)
    filled = find_lambda(hc, 1.0, tie_rule="fill")
    assert filled.alpha.sum() * hc.ds == pytest.approx(1.0, abs=1e-12)
    assert set(np.unique(filled.alpha)) <= {0.0, 1.0}


def test_find_lambda_threshold_crossing():
    cells, S, T = 200, 2.0, 1.2
    s_mid = (np.arange(cells) + 0.5) * S / cells
    h0 = 1.0 - s_mid
    search = find_lambda(cells_of(h0, np.zeros(cells), S), T)
    assert abs(search.lam - (-(1.0 - T))) <= S / cells
    assert search.alpha.sum() * S / cells == pytest.approx(T, abs=1e-9)
    assert np.all(search.alpha[s_mid < T - 0.02] == 1.0) and np.all(search.alpha[s_mid > T + 0.02] == 0.0)


@given(arrays(float, 30, elements=st.floats(-5, 5)), arrays(float, 30, elements=st.floats(-5, 5)),
       st.floats(-10, 10), st.floats(0, 5))
def test_time_mass_monotone_in_lambda(h0, h, lam, dl):
    hc = cells_of(h0, h)
    assert time_mass(hc, lam) <= time_mass(hc, lam + dl)


@given(arrays(float, 30, elements=st.floats(-5, 5)), arrays(float, (30, 2), elements=st.floats(-5, 5)),
       st.floats(0.1, 1.9), st.sampled_from(["fill", "uniform"]))
def test_constrained_best_response_is_feasible_and_maximal(h0, h, T, rule):
    hc = cells_of(h0, h)
    ctrl, search = constrained_best_response(hc, T, rule)
    ctrl.check(T)
    assert residual_from_cells(hc, ctrl, search.lam) <= 1e-9 * (1 + np.abs(h0).max() + np.abs(h).max())


def test_fixed_point_init_returns_immediately():
    spec = shift1d(N=3)
    ctrl, _ = frank_wolfe(spec, ReducedControl.uniform(1.0, 1.0, 60, 1))
    again, cert = frank_wolfe(spec, ctrl)
    assert cert.iterations == 0 and cert.status == "converged"
    assert cert.residual <= 1e-12
    assert np.array_equal(again.alpha, ctrl.alpha)


def test_shift1d_optimum():
    spec = shift1d(N=5)
    ctrl, cert = frank_wolfe(spec, ReducedControl.uniform(1.0, 1.0, 100, 1))
    assert cert.cost == pytest.approx(math.tanh(-1.0), abs=1e-9)
    assert cert.residual <= 1e-6
    active = np.abs(ctrl.beta[:, 0]) > 1e-9
    assert np.allclose(ctrl.beta[active, 0], -1.0) and np.count_nonzero(active) * ctrl.ds == pytest.approx(1.0)
    imp = project_to_impulsive(spec, ctrl, solve_forward(spec, ctrl))
    assert len(imp.jumps) == 1


@pytest.fixture(scope="module")
def reachable_run():
    """Interior optimum: several iterations are needed."""
    spec = smooth1d(N=6, T=1.0, M=1.0, center=0.5)
    init = ReducedControl.uniform(1.0, 1.0, 60, 1)
    return spec, init, *frank_wolfe(spec, init, FWOptions(max_iter=25))


def test_history_monotone_and_feasible(reachable_run):
    spec, init, ctrl, cert = reachable_run
    costs = [h["cost"] for h in cert.history]
    assert len(costs) > 2
    assert all(b <= a + 1e-14 for a, b in zip(costs, costs[1:]))
    ctrl.check(spec.T)
    assert cert.cost <= terminal_cost(spec, solve_forward(spec, init))


def test_gap_equals_residual_on_every_iterate(reachable_run):
    spec, init, _, cert = reachable_run
    for h in cert.history:
        assert h["gap"] == pytest.approx(h["residual"], abs=1e-10)


def test_pmp_residual_matches_certificate(reachable_run):
    spec, _, ctrl, cert = reachable_run
    ev = evaluate(spec, ctrl)
    assert pmp_residual(spec, ctrl, ev.lifted, cert.lam) == pytest.approx(cert.residual, abs=1e-10)
    best, search = constrained_best_response(ev.cells, spec.T)
    assert fw_gap(ev.cells, ctrl, best) == pytest.approx(residual_from_cells(ev.cells, ctrl, search.lam), abs=1e-10)


def test_certificate_json(reachable_run):
    cert = reachable_run[3]
    data = json.loads(cert.to_json())
    assert {"lambda", "residual", "cost", "iterations", "history"} <= set(data)
    assert data["history"][0]["iteration"] == 0


def test_planar_optimizer_uses_one_field():
    spec = planar(N=6)
    ctrl, cert = frank_wolfe(spec, ReducedControl.uniform(spec.T, spec.M, 50, 2))
    assert cert.status == "converged"
    assert np.allclose(ctrl.beta[:, 1], 0.0)
    assert ctrl.beta[:, 0].sum() * ctrl.ds == pytest.approx(spec.M)
