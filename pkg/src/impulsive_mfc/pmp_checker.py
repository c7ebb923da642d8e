"""Certification of candidate optima against the maximum principles.

``check_reduced`` tests the reduced maximum condition cell by cell;
``check_impulsive`` tests its impulsive counterparts (drift dominates off the
impulses, equality on the absolutely continuous part, control fields dominate
along every jump) on the time-changed objects.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .fields import ProblemSpec, control_fields
from .hamiltonian import (
    CellHamiltonian,
    LiftedTrajectory,
    cell_hamiltonians,
    costate_rhs,
    hamiltonian_H0,
    hamiltonian_H1,
)
from .reduced_system import ReducedControl
from .time_change import EPS_ALPHA, EPS_BETA, ImpulsiveSolution


class CheckError(ValueError):
    pass


def default_tol(H1, H0) -> np.ndarray:
    return 1e-4 * (1.0 + np.abs(H1) + np.abs(H0))


def lifted_at(lifted: LiftedTrajectory, s: float) -> tuple[np.ndarray, np.ndarray]:
    """(y, p) ensemble at reduced time s: quadratic through node, midpoint, node."""
    ds = float(lifted.times[1] - lifted.times[0])
    c = min(int(np.floor(s / ds)), lifted.cells - 1)
    theta = s / ds - c
    if theta <= 1e-12:
        return lifted.y[c], lifted.p[c]
    if theta >= 1 - 1e-12:
        return lifted.y[c + 1], lifted.p[c + 1]
    w0 = 2 * (theta - 0.5) * (theta - 1)
    wm = -4 * theta * (theta - 1)
    w1 = 2 * theta * (theta - 0.5)
    y = w0 * lifted.y[c] + wm * lifted.y_mid[c] + w1 * lifted.y[c + 1]
    p = w0 * lifted.p[c] + wm * lifted.p_mid[c] + w1 * lifted.p[c + 1]
    return y, p


def _boundary(spec: ProblemSpec, Y0, YS, PS) -> dict:
    return {
        "initial": float(np.max(np.abs(Y0 - spec.theta.points))),
        "terminal": float(np.max(np.abs(PS + spec.cost.grad(YS)).sum(axis=1))),
    }


def _boundary_ok(b: dict) -> bool:
    return b["initial"] <= 1e-12 and b["terminal"] <= 1e-12


@dataclass
class ReducedReport:
    passed: bool
    defect: np.ndarray
    tolerance: np.ndarray
    violations: list[int]
    worst_cell: int
    integrated_defect: float
    boundary: dict

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "violations": self.violations,
            "worst_cell": self.worst_cell,
            "worst_defect": float(self.defect[self.worst_cell]),
            "integrated_defect": self.integrated_defect,
            "boundary": self.boundary,
        }

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [
            f"reduced maximum condition: {status}",
            f"  integrated defect {self.integrated_defect:.3e}; worst cell {self.worst_cell} "
            f"(defect {self.defect[self.worst_cell]:.3e}, tol {self.tolerance[self.worst_cell]:.3e})",
            f"  boundary residuals: initial {self.boundary['initial']:.1e}, terminal {self.boundary['terminal']:.1e}",
        ]
        if self.violations:
            shown = ", ".join(map(str, self.violations[:10]))
            lines.append(f"  violating cells ({len(self.violations)}): {shown}{' ...' if len(self.violations) > 10 else ''}")
        return "\n".join(lines)


def check_reduced(
    spec: ProblemSpec,
    ctrl: ReducedControl,
    lifted: LiftedTrajectory,
    lam: float,
    tol: float | None = None,
    cells: CellHamiltonian | None = None,
) -> ReducedReport:
    """Cellwise defect max{H1, H0} - H(current control) against a tolerance."""
    if lifted.cells != ctrl.cells or abs(lifted.times[-1] - ctrl.S) > 1e-12 * ctrl.S:
        raise CheckError("lifted trajectory and control are on different grids")
    hc = cells if cells is not None else cell_hamiltonians(spec, lifted)
    H1 = hc.h0 + lam
    H0 = hc.impulsive
    defect = hc.maximum(lam) - hc.value(lam, ctrl.alpha, ctrl.beta)
    tolc = default_tol(H1, H0) if tol is None else np.full(ctrl.cells, float(tol))
    bad = np.flatnonzero(defect > tolc)
    boundary = _boundary(spec, lifted.y[0], lifted.y[-1], lifted.p[-1])
    worst = int(np.argmax(defect - tolc))
    return ReducedReport(
        passed=bool(bad.size == 0 and _boundary_ok(boundary)),
        defect=defect,
        tolerance=tolc,
        violations=bad.tolist(),
        worst_cell=worst,
        integrated_defect=float(np.sum(defect) * ctrl.ds),
        boundary=boundary,
    )


@dataclass
class ConditionSuite:
    name: str
    checked: int = 0
    violations: list[dict] = field(default_factory=list)
    worst: float = 0.0  # largest (value - tolerance); <= 0 means pass

    @property
    def passed(self) -> bool:
        return not self.violations

    def record(self, where: dict, excess: float) -> None:
        self.checked += 1
        self.worst = excess if self.checked == 1 else max(self.worst, excess)
        if excess > 0:
            self.violations.append({**where, "excess": float(excess)})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


@dataclass
class ImpulsiveReport:
    passed: bool
    conditions: dict[str, ConditionSuite]
    node_kinds: list[str]
    worst_cell: dict | None
    integrated_defect: float
    characteristic_residual: float
    boundary: dict
    exceptions: list[int]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "conditions": {k: v.to_dict() for k, v in self.conditions.items()},
            "worst_cell": self.worst_cell,
            "integrated_defect": self.integrated_defect,
            "characteristic_residual": self.characteristic_residual,
            "boundary": self.boundary,
            "exceptions": self.exceptions,
        }

    def summary(self) -> str:
        lines = [f"impulsive maximum conditions: {'PASS' if self.passed else 'FAIL'}"]
        for key, suite in self.conditions.items():
            state = "pass" if suite.passed else f"FAIL ({len(suite.violations)} violations)"
            lines.append(f"  {key}: {state}, {suite.checked} points checked")
        if self.worst_cell:
            lines.append(f"  worst violation: {self.worst_cell}")
        lines.append(f"  characteristic residual along jumps: {self.characteristic_residual:.2e}")
        return "\n".join(lines)


def _grid_slack(spec: ProblemSpec, lifted: LiftedTrajectory, lam: float) -> float:
    """Largest change of H1 - H0 between adjacent reduced nodes."""
    D = np.array([hamiltonian_H1(spec, Y, P, lam) - hamiltonian_H0(spec, Y, P) for Y, P in zip(lifted.y, lifted.p)])
    return float(np.max(np.abs(np.diff(D)))) if D.size > 1 else 0.0


def check_impulsive(
    spec: ProblemSpec,
    imp: ImpulsiveSolution,
    ctrl: ReducedControl,
    lifted: LiftedTrajectory | None,
    lam: float,
    tol: float | None = None,
    eps_alpha: float = EPS_ALPHA,
    eps_beta: float = EPS_BETA,
) -> ImpulsiveReport:
    """Impulsive maximum conditions on the projected costate curves.

    maxcond1: H1 >= H0 where no control acts; maxcond2: H1 = H0 where the
    control is absolutely continuous (and it points along the maximising
    field); maxcond3: H1 <= H0 along each jump completion, with the attached
    control maximising sum_i u_i H_i.  Pointwise values are compared with a
    tolerance inflated by the grid variation of H1 - H0.
    """
    if lifted is None:
        raise CheckError("costate projection missing: a lifted trajectory is required")
    hc = cell_hamiltonians(spec, lifted)
    slack = _grid_slack(spec, lifted, lam)
    absb = np.abs(ctrl.beta).sum(axis=1)

    def tol_at(H1, H0):
        base = default_tol(H1, H0) if tol is None else tol
        return float(base) + slack

    suites = {k: ConditionSuite(k) for k in ("maxcond1", "maxcond2", "maxcond3")}
    kinds, exceptions = [], []
    for j, (t, s) in enumerate(zip(imp.t_grid, imp.s_of_t)):
        c = min(int(np.floor(s / ctrl.ds + 1e-9)), ctrl.cells - 1)
        if ctrl.alpha[c] <= eps_alpha:
            kinds.append("jump")
            exceptions.append(j)
            continue
        Y, P = lifted_at(lifted, s)
        H1, H0 = hamiltonian_H1(spec, Y, P, lam), hamiltonian_H0(spec, Y, P)
        tl = tol_at(H1, H0)
        where = {"t": float(t), "node": j, "cell": c}
        if absb[c] <= eps_beta:
            kinds.append("no-impulse")
            suites["maxcond1"].record(where, (H0 - H1) - tl)
        else:
            kinds.append("ac-control")
            suites["maxcond2"].record(where, abs(H1 - H0) - tl)
            direction = ctrl.beta[c] / absb[c]
            hval = float(direction @ hc.h[c])
            tlc = float(default_tol(hc.h0[c] + lam, hc.impulsive[c]) if tol is None else tol)
            suites["maxcond2"].record({**where, "check": "direction"}, (hc.impulsive[c] - hval) - tlc)

    char_res = 0.0
    for q, jump in enumerate(imp.jumps):
        for r, s in enumerate(jump.fast_s):
            Y, P = lifted_at(lifted, s)
            H1, H0 = hamiltonian_H1(spec, Y, P, lam), hamiltonian_H0(spec, Y, P)
            suites["maxcond3"].record(
                {"jump": q, "tau": jump.tau, "varsigma": float(jump.fast_grid[r])}, (H1 - H0) - tol_at(H1, H0)
            )
        live = [c for c in range(*jump.cells) if absb[c] > eps_beta]
        for r, (c, u) in enumerate(zip(live, jump.attached_control)):
            hval = float(u @ hc.h[c])
            tlc = float(default_tol(hc.h0[c] + lam, hc.impulsive[c]) if tol is None else tol)
            suites["maxcond3"].record(
                {"jump": q, "tau": jump.tau, "fast_cell": r, "cell": c, "check": "direction"},
                (hc.impulsive[c] - hval) - tlc,
            )
        char_res = max(char_res, _characteristic_residual(spec, jump, lifted))

    # rho_0 is the pair ensemble at xi^<-(0), which is s = 0 unless the run opens with a jump
    boundary = _boundary(spec, lifted.y[0], lifted.y[-1], lifted.p[-1])
    all_viol = [(k, v) for k, s in suites.items() for v in s.violations]
    worst = None
    if all_viol:
        k, v = max(all_viol, key=lambda kv: kv[1]["excess"])
        worst = {"condition": k, **v}
    defect = hc.maximum(lam) - hc.value(lam, ctrl.alpha, ctrl.beta)
    passed = all(s.passed for s in suites.values()) and _boundary_ok(boundary)
    return ImpulsiveReport(
        passed=passed,
        conditions=suites,
        node_kinds=kinds,
        worst_cell=worst,
        integrated_defect=float(np.sum(defect) * ctrl.ds),
        characteristic_residual=char_res,
        boundary=boundary,
        exceptions=exceptions,
    )


def _characteristic_residual(spec: ProblemSpec, jump, lifted: LiftedTrajectory) -> float:
    """Trapezoidal defect of the jump-phase system along the fast grid.

    y' = sum_i u_i f_i(y), p' = -p sum_i u_i Df_i(y), per unit of fast time.
    """
    worst = 0.0
    for r, u in enumerate(jump.attached_control):
        dsig = jump.fast_grid[r + 1] - jump.fast_grid[r]
        if dsig <= 0:
            continue
        Ya, Pa = lifted_at(lifted, jump.fast_s[r])
        Yb, Pb = lifted_at(lifted, jump.fast_s[r + 1])
        Fa = np.einsum("i,ika->ka", u, control_fields(spec, Ya))
        Fb = np.einsum("i,ika->ka", u, control_fields(spec, Yb))
        Ga = costate_rhs(spec, Ya, Pa, 0.0, u)
        Gb = costate_rhs(spec, Yb, Pb, 0.0, u)
        ry = np.max(np.abs(Yb - Ya - 0.5 * dsig * (Fa + Fb))) / dsig
        rp = np.max(np.abs(Pb - Pa - 0.5 * dsig * (Ga + Gb))) / dsig
        worst = max(worst, ry, rp)
    return float(worst)


def check_report(reduced: ReducedReport, impulsive: ImpulsiveReport, lam: float) -> dict:
    """Combined JSON report of both checkers."""
    imp = impulsive.to_dict()
    return {
        "passed": bool(reduced.passed and impulsive.passed),
        "lambda": lam,
        "conditions": {k: v["passed"] for k, v in imp["conditions"].items()},
        "worst_cell": reduced.worst_cell,
        "worst_impulsive": impulsive.worst_cell,
        "integrated_defect": reduced.integrated_defect,
        "reduced": reduced.to_dict(),
        "impulsive": imp,
    }


def report_json(report: dict) -> str:
    return json.dumps(report, indent=1, default=float)

