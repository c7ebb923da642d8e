"""Discontinuous time change from reduced time s back to original time t.

Runs of cells where the time speed alpha vanishes are collapsed to single
instants of original time; the motion accumulated over such a run becomes a
jump of the measure curve, recorded together with its fast-time graph
completion and attached control.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .fields import ProblemSpec, commutator_defect
from .measures import EmpiricalMeasure
from .reduced_system import (
    ParticleTrajectory,
    ReducedControl,
    default_tol_T,
    rk4_step,
    state_at,
)

EPS_ALPHA = 1e-9
EPS_BETA = 1e-9


class CommutativityError(ValueError):
    def __init__(self, defect: float, tol: float):
        super().__init__(f"control fields do not commute on the support: defect {defect:.3g} > tol {tol:.3g}")
        self.defect = defect


@dataclass(frozen=True)
class TimeChange:
    """Piecewise-linear xi(s) = int_0^s alpha, stored at the grid nodes."""

    nodes: np.ndarray
    values: np.ndarray
    alpha: np.ndarray

    @property
    def S(self) -> float:
        return float(self.nodes[-1])

    @property
    def T(self) -> float:
        return float(self.values[-1])

    def __call__(self, s):
        return np.interp(s, self.nodes, self.values)

    def pseudo_inverse(self, t: float, T: float | None = None) -> float:
        return xi_pseudo_inverse(self, t, T)


def xi(ctrl: ReducedControl) -> TimeChange:
    values = np.concatenate([[0.0], np.cumsum(ctrl.alpha) * ctrl.ds])
    return TimeChange(ctrl.grid, values, np.asarray(ctrl.alpha))


def xi_pseudo_inverse(tc: TimeChange, t: float, T: float | None = None) -> float:
    """inf{s : xi(s) > t} for t < T, and S at t = T.

    ``T`` defaults to xi(S); pass the nominal horizon to absorb the quadrature
    error of int alpha.
    """
    T = tc.T if T is None else T
    tol = default_tol_T(tc.S)
    if t < -tol or t > T + tol:
        raise ValueError(f"t = {t} lies outside [0, {T}]")
    if t >= T - tol * 1e-3:
        return tc.S
    j = int(np.searchsorted(tc.values, t, side="right"))
    if j >= tc.values.size:
        return tc.S
    # xi(s_{j-1}) <= t < xi(s_j); xi is linear with slope alpha on cell j-1
    s0, v0 = tc.nodes[j - 1], tc.values[j - 1]
    slope = (tc.values[j] - v0) / (tc.nodes[j] - s0)
    return float(min(s0 + (t - v0) / slope, tc.nodes[j]))


@dataclass
class Jump:
    tau: float
    T_tau: float
    omega: np.ndarray
    cells: tuple[int, int]  # reduced cells [start, stop)
    s_interval: tuple[float, float]
    left_state: EmpiricalMeasure
    right_state: EmpiricalMeasure
    fast_grid: np.ndarray  # varsigma nodes on [0, T_tau]
    fast_s: np.ndarray  # reduced time Upsilon(varsigma) at those nodes
    completion: np.ndarray  # (nodes, N, n)
    attached_control: np.ndarray  # (fast cells, m); sum |u_i| = 1

    def summary(self) -> dict:
        return {
            "tau": self.tau,
            "T_tau": self.T_tau,
            "omega": self.omega.tolist(),
            "cells": list(self.cells),
            "s_interval": list(self.s_interval),
        }

    def completion_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        n = self.completion.shape[2]
        m = self.attached_control.shape[1]
        writer.writerow(["varsigma", "k", *[f"y{i}" for i in range(n)], *[f"u{i + 1}" for i in range(m)]])
        for j, (sig, Y) in enumerate(zip(self.fast_grid, self.completion)):
            u = self.attached_control[min(j, len(self.attached_control) - 1)]
            for k, y in enumerate(Y):
                writer.writerow([repr(float(sig)), k, *[repr(float(v)) for v in y], *[repr(float(v)) for v in u]])
        return buf.getvalue()


@dataclass
class ImpulsiveSolution:
    t_grid: np.ndarray
    s_of_t: np.ndarray  # xi^<-(t) on the grid
    mu: np.ndarray  # (len(t_grid), N, n), right-continuous
    U: np.ndarray  # (len(t_grid), m)
    V: np.ndarray  # (len(t_grid),)
    jumps: list[Jump]
    dead_runs: list[tuple[int, int]] = field(default_factory=list)
    M: float = float("nan")

    def measure(self, j: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.mu[j])

    def measure_at(self, t: float) -> EmpiricalMeasure:
        j = int(np.argmin(np.abs(self.t_grid - t)))
        if abs(self.t_grid[j] - t) > 1e-12 * max(1.0, abs(t)):
            raise KeyError(f"time {t} is not on the t-grid")
        return self.measure(j)

    def to_json(self) -> str:
        return json.dumps(
            {
                "t_grid": self.t_grid.tolist(),
                "s_of_t": self.s_of_t.tolist(),
                "jumps": [j.summary() for j in self.jumps],
                "dead_runs": [list(r) for r in self.dead_runs],
                "U": self.U.tolist(),
                "V": self.V.tolist(),
            },
            indent=1,
        )

    def mu_csv(self) -> str:
        return ParticleTrajectory(self.t_grid, self.mu).to_csv(time_label="t")


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    idx = np.flatnonzero(np.diff(np.concatenate([[0], mask.astype(int), [0]])))
    return list(zip(idx[0::2], idx[1::2]))


def project_to_impulsive(
    spec: ProblemSpec,
    ctrl: ReducedControl,
    traj: ParticleTrajectory,
    t_grid=None,
    eps_alpha: float = EPS_ALPHA,
    eps_beta: float = EPS_BETA,
) -> ImpulsiveSolution:
    """Push a reduced process through xi^<- to an impulsive solution on [0, T].

    mu_t = nu_{xi^<-(t)}, U(t) = int_0^{xi^<-(t)} beta, V(t) = int_0^{xi^<-(t)} |beta|.
    Every maximal run of cells with alpha <= eps_alpha carrying some active
    beta becomes a jump; runs with no active beta are dead time and are only
    reported.
    """
    ds = ctrl.ds
    tc = xi(ctrl)
    absb = np.abs(ctrl.beta).sum(axis=1)
    flat = ctrl.alpha <= eps_alpha
    active = absb > eps_beta
    cumU = np.vstack([np.zeros(ctrl.m), np.cumsum(ctrl.beta, axis=0) * ds])
    cumV = np.concatenate([[0.0], np.cumsum(absb) * ds])

    jumps, dead = [], []
    for start, stop in _runs(flat):
        if not np.any(active[start:stop]):
            dead.append((int(start), int(stop)))
            continue
        cells = np.arange(start, stop)
        live = cells[active[start:stop]]
        fast_grid = np.concatenate([[0.0], np.cumsum(absb[live]) * ds])
        node_idx = np.concatenate([[live[0]], live + 1])
        completion = traj.states[node_idx]
        u_tau = ctrl.beta[live] / absb[live, None]
        jumps.append(
            Jump(
                tau=float(tc.values[start]),
                T_tau=float(cumV[stop] - cumV[start]),
                omega=cumU[stop] - cumU[start],
                cells=(int(start), int(stop)),
                s_interval=(float(start * ds), float(stop * ds)),
                left_state=traj.measure(int(start)),
                right_state=traj.measure(int(stop)),
                fast_grid=fast_grid,
                fast_s=ctrl.grid[node_idx],
                completion=completion,
                attached_control=u_tau,
            )
        )

    if t_grid is None:
        t_grid = np.linspace(0.0, spec.T, ctrl.cells + 1)
    t_grid = np.asarray(t_grid, dtype=float)
    s_of_t = np.array([xi_pseudo_inverse(tc, t, spec.T) for t in t_grid])
    mu = np.array([state_at(spec, ctrl, traj, s) for s in s_of_t])
    U = np.stack([np.interp(s_of_t, ctrl.grid, cumU[:, i]) for i in range(ctrl.m)], axis=1)
    V = np.interp(s_of_t, ctrl.grid, cumV)
    return ImpulsiveSolution(t_grid, s_of_t, mu, U, V, jumps, dead, M=spec.M)


def flow(f, X: np.ndarray, duration: float, substeps: int = 64) -> np.ndarray:
    """Flow of x' = f(x) for a signed duration (negative means time reversal)."""
    if duration == 0.0:
        return X.copy()
    h = duration / substeps
    for _ in range(substeps):
        X = rk4_step(f, X, h)
    return X


def commutative_jump_map(
    spec: ProblemSpec,
    left: EmpiricalMeasure,
    omega,
    substeps: int = 64,
    tol_comm: float = 1e-8,
    order=None,
) -> EmpiricalMeasure:
    """Jump exit measure as the push-forward through composed single-field flows.

    Valid only when the control fields commute on the support of ``left``;
    otherwise :class:`CommutativityError` reports the measured defect.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    worst = 0.0
    for i in range(1, spec.m + 1):
        for j in range(i + 1, spec.m + 1):
            worst = max(worst, commutator_defect(spec, i, j, left.points))
    if worst > tol_comm:
        raise CommutativityError(worst, tol_comm)
    order = range(spec.m) if order is None else order
    X = np.array(left.points, dtype=float)
    for i in order:
        X = flow(spec.controls[i], X, float(omega[i]), substeps)
    return EmpiricalMeasure(X)
