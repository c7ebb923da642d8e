"""Conditional-gradient (Frank-Wolfe) optimisation of the reduced problem.

Each iteration solves the state forward and the costate backward, maximises
the cell-averaged Hamiltonian over the control set with a multiplier lambda
chosen so that the maximiser spends exactly T units of original time, and
moves towards that maximiser with a backtracking line search on the true cost.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .fields import ProblemSpec
from .hamiltonian import CellHamiltonian, LiftedTrajectory, cell_hamiltonians, solve_backward
from .reduced_system import ReducedControl, default_tol_T, solve_forward, terminal_cost

TIE_RULES = ("fill", "uniform")


@dataclass
class LambdaSearch:
    lam: float
    alpha: np.ndarray  # a*(c; lambda) with ties resolved fractionally
    bracket: tuple[float, float]
    iterations: int
    ties: int
    degenerate: bool = False


def _threshold_gap(hc: CellHamiltonian) -> np.ndarray:
    """d_c = max_i |H_i| - H_drift: a* = 1 on cell c iff lambda >= d_c."""
    return hc.impulsive - hc.h0


def time_mass(hc: CellHamiltonian, lam: float) -> float:
    """int a*(s; lambda) ds with the tie-break a = 1."""
    return float(np.count_nonzero(_threshold_gap(hc) <= lam) * hc.ds)


def find_lambda(
    hc: CellHamiltonian,
    T: float,
    tie_rule: str = "fill",
    tol_T: float | None = None,
    width: float = 1e-12,
) -> LambdaSearch:
    """Bisection on lambda for int a*(.; lambda) = T.

    The mass is a nondecreasing step function of lambda.  When T falls inside a
    jump of that function (cells tied at the threshold), the tied cells get a
    fractional a in [0, 1]: ``fill`` saturates them in time order (keeping the
    control bang-bang but for one cell), ``uniform`` spreads the mass evenly.
    """
    if tie_rule not in TIE_RULES:
        raise ValueError(f"tie_rule must be one of {TIE_RULES}")
    S = hc.S
    tol_T = default_tol_T(S) if tol_T is None else tol_T
    d = _threshold_gap(hc)
    scale = 1.0 + float(np.max(np.abs(d)))
    tie_tol = 1e-12 * scale
    target = T / hc.ds  # in cells

    if float(np.ptp(d)) <= tie_tol:
        lam = float(d[0])
        return LambdaSearch(lam, _resolve(d, lam, tie_tol, target, tie_rule), (lam, lam), 0, d.size, True)

    bound = float(np.max(np.abs(d))) * S / min(T, S - T)
    lo, hi = -bound, bound
    while time_mass(hc, lo) > T - tol_T:
        lo = 2 * lo - 1.0
    while time_mass(hc, hi) < T - tol_T:
        hi = 2 * hi + 1.0
    bracket = (lo, hi)
    it = 0
    lam = None
    while hi - lo > width and it < 400:
        it += 1
        mid = 0.5 * (lo + hi)
        mass = time_mass(hc, mid)
        if abs(mass - T) <= tol_T:
            lam = mid
            break
        if mass < T:
            lo = mid
        else:
            hi = mid
    if lam is None:
        # T sits inside a jump of the mass: snap to the level where it jumps
        lam = float(np.max(d[d <= hi]))
    alpha = _resolve(d, lam, tie_tol, target, tie_rule)
    ties = int(np.count_nonzero(np.abs(d - lam) <= tie_tol))
    return LambdaSearch(lam, alpha, bracket, it, ties)


def _resolve(d: np.ndarray, lam: float, tie_tol: float, target: float, tie_rule: str) -> np.ndarray:
    alpha = (d < lam - tie_tol).astype(float)
    tied = np.flatnonzero(np.abs(d - lam) <= tie_tol)
    need = target - alpha.sum()
    if tied.size == 0:
        return alpha
    need = min(max(need, 0.0), float(tied.size))
    if tie_rule == "uniform":
        alpha[tied] = need / tied.size
    else:
        full = int(math.floor(need + 1e-9))
        full = min(full, tied.size)
        alpha[tied[:full]] = 1.0
        if full < tied.size:
            alpha[tied[full]] = max(need - full, 0.0)
    return alpha


def _vertex_beta(hc: CellHamiltonian) -> np.ndarray:
    """Per cell, sign(H_i*) e_i* with i* the lowest index maximising |H_i|."""
    istar = np.argmax(np.abs(hc.h), axis=1)
    sgn = np.sign(hc.h[np.arange(hc.cells), istar])
    sgn[sgn == 0] = 1.0
    beta = np.zeros_like(hc.h)
    beta[np.arange(hc.cells), istar] = sgn
    return beta


def best_response(hc: CellHamiltonian, lam: float) -> ReducedControl:
    """Pointwise maximiser of H over the vertices of A (ties prefer a = 1)."""
    drift_wins = hc.h0 + lam >= hc.impulsive
    alpha = drift_wins.astype(float)
    beta = _vertex_beta(hc) * (~drift_wins)[:, None]
    return ReducedControl(hc.S, alpha, beta)


def constrained_best_response(hc: CellHamiltonian, T: float, tie_rule: str = "fill", tol_T=None):
    """Maximiser of H over the admissible set: vertices plus fractional ties."""
    search = find_lambda(hc, T, tie_rule, tol_T)
    beta = _vertex_beta(hc) * (1.0 - search.alpha)[:, None]
    return ReducedControl(hc.S, search.alpha, beta), search


def fw_gap(hc: CellHamiltonian, current: ReducedControl, best: ReducedControl) -> float:
    """int p.(f(x, best) - f(x, current)) ds, the first-order decrease towards ``best``."""
    diff = hc.value(0.0, best.alpha, best.beta) - hc.value(0.0, current.alpha, current.beta)
    return float(np.sum(diff) * hc.ds)


def residual_from_cells(hc: CellHamiltonian, ctrl: ReducedControl, lam: float) -> float:
    return float(np.sum(hc.maximum(lam) - hc.value(lam, ctrl.alpha, ctrl.beta)) * hc.ds)


def pmp_residual(spec: ProblemSpec, ctrl: ReducedControl, lifted: LiftedTrajectory, lam: float) -> float:
    """int_0^S [max_A H(gamma_s, lambda, .) - H(gamma_s, lambda, alpha(s), beta(s))] ds."""
    return residual_from_cells(cell_hamiltonians(spec, lifted), ctrl, lam)


@dataclass
class FWOptions:
    tol_gap: float | None = None  # default 1e-6 * (1 + |cost|)
    max_iter: int = 500
    armijo: float = 0.5
    sufficient_decrease: float = 1e-4
    min_step: float = 1e-14
    tie_rule: str = "fill"
    substeps: int = 1
    workers: int = 1
    tol_T: float | None = None


@dataclass
class ExtremalCertificate:
    lam: float
    residual: float
    cost: float
    iterations: int
    gap: float
    status: str
    bracket: tuple[float, float]
    history: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        out["bracket"] = list(self.bracket)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


@dataclass
class Evaluation:
    """Everything one forward-backward sweep produces for a control."""

    ctrl: ReducedControl
    cost: float
    traj: object
    lifted: LiftedTrajectory
    cells: CellHamiltonian


def evaluate(spec: ProblemSpec, ctrl: ReducedControl, substeps: int = 1, workers: int = 1) -> Evaluation:
    traj = solve_forward(spec, ctrl, substeps, workers)
    lifted = solve_backward(spec, ctrl, traj)
    return Evaluation(ctrl, terminal_cost(spec, traj), traj, lifted, cell_hamiltonians(spec, lifted))


def frank_wolfe(spec: ProblemSpec, init: ReducedControl, opts: FWOptions | None = None):
    """Minimise the terminal cost over admissible reduced controls.

    Returns the final control and an :class:`ExtremalCertificate` whose
    ``residual`` is the integrated maximum-condition defect at the returned
    multiplier.
    """
    opts = opts or FWOptions()
    init.check(spec.T, opts.tol_T)
    ctrl = init
    ev = evaluate(spec, ctrl, opts.substeps, opts.workers)
    history: list[dict] = []
    status = "max_iter"
    it = 0
    while True:
        best, search = constrained_best_response(ev.cells, spec.T, opts.tie_rule, opts.tol_T)
        gap = fw_gap(ev.cells, ctrl, best)
        resid = residual_from_cells(ev.cells, ctrl, search.lam)
        tol_gap = opts.tol_gap if opts.tol_gap is not None else 1e-6 * (1.0 + abs(ev.cost))
        record = {"iteration": it, "cost": ev.cost, "gap": gap, "residual": resid, "lambda": search.lam, "step": 0.0}
        history.append(record)
        if gap <= tol_gap:
            status = "converged"
            break
        if it >= opts.max_iter:
            break
        tau = 1.0
        accepted = None
        while tau >= opts.min_step:
            trial = ctrl.combine(best, tau)
            J = terminal_cost(spec, solve_forward(spec, trial, opts.substeps, opts.workers))
            if J <= ev.cost - opts.sufficient_decrease * tau * gap:
                accepted = trial
                break
            tau *= opts.armijo
        if accepted is None:
            status = "stagnation"
            break
        record["step"] = tau
        ctrl = accepted
        ev = evaluate(spec, ctrl, opts.substeps, opts.workers)
        it += 1
    last = history[-1]
    cert = ExtremalCertificate(
        lam=last["lambda"],
        residual=max(last["residual"], 0.0),
        cost=ev.cost,
        iterations=it,
        gap=last["gap"],
        status=status,
        bracket=search.bracket,
        history=history,
    )
    return ctrl, cert
