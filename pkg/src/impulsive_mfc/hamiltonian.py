"""Costate sweep and Hamiltonian functionals on lifted (state, costate) ensembles.

Costates follow the mean-field normalisation p_k(S) = -grad l(y_k(S)); all
Hamiltonians are per-particle averages, so for a control (a, b)

    H = a * (H_drift + lambda) + sum_i b_i * H_i,

with H_drift = (1/(2N^2)) sum_{k,j} (p_k - p_j).g(y_k - y_j) + (1/N) sum_k p_k.f_0(y_k)
and H_i = (1/N) sum_k p_k.f_i(y_k).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .fields import ProblemSpec, control_fields, velocity
from .reduced_system import IntegrationError, ParticleTrajectory, ReducedControl


@dataclass(frozen=True, eq=False)
class LiftedTrajectory:
    times: np.ndarray
    y: np.ndarray  # (nodes, N, n)
    p: np.ndarray  # (nodes, N, n)
    y_mid: np.ndarray  # (cells, N, n), cell midpoints
    p_mid: np.ndarray

    @property
    def cells(self) -> int:
        return self.times.size - 1

    @property
    def N(self) -> int:
        return self.y.shape[1]

    def pairs(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        return self.y[j], self.p[j]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        n = self.y.shape[2]
        writer.writerow(["s", "k", *[f"y{i}" for i in range(n)], *[f"p{i}" for i in range(n)]])
        for s, Y, P in zip(self.times, self.y, self.p):
            for k in range(Y.shape[0]):
                writer.writerow([repr(float(s)), k, *[repr(float(v)) for v in Y[k]], *[repr(float(v)) for v in P[k]]])
        return buf.getvalue()


def costate_rhs(spec: ProblemSpec, Y: np.ndarray, P: np.ndarray, a: float, b) -> np.ndarray:
    """p_k' = -(a/N) sum_j Dg(y_k - y_j)^T (p_k - p_j) - (a Df_0(y_k) + sum_i b_i Df_i(y_k))^T p_k."""
    N, n = Y.shape
    out = np.zeros_like(P)
    if a != 0.0:
        diffs = (Y[:, None, :] - Y[None, :, :]).reshape(-1, n)
        Jg = spec.kernel.jacobian(diffs).reshape(N, N, n, n)
        dP = P[:, None, :] - P[None, :, :]
        out -= a / N * np.einsum("kjab,kja->kb", Jg, dP)
        out -= a * np.einsum("kab,ka->kb", spec.f0.jacobian(Y), P)
    for bi, f in zip(np.atleast_1d(b), spec.controls):
        if bi != 0.0:
            out -= bi * np.einsum("kab,ka->kb", f.jacobian(Y), P)
    return out


def _hermite_mid(x0, x1, v0, v1, h):
    return 0.5 * (x0 + x1) + h * (v0 - v1) / 8.0


def solve_backward(spec: ProblemSpec, ctrl: ReducedControl, traj: ParticleTrajectory) -> LiftedTrajectory:
    """Backward RK4 sweep for the costates against the stored forward states.

    Within a cell the forward state is the cubic Hermite interpolant of the
    two node states and their velocities under that cell's control.
    """
    if traj.states.shape[0] != ctrl.cells + 1:
        raise ValueError("trajectory and control live on different grids")
    h = ctrl.ds
    Ys = traj.states
    P = -spec.cost.grad(Ys[-1])
    ps = np.empty_like(Ys)
    ps[-1] = P
    y_mid = np.empty((ctrl.cells, *Ys.shape[1:]))
    p_mid = np.empty_like(y_mid)
    for c in range(ctrl.cells - 1, -1, -1):
        a, b = float(ctrl.alpha[c]), ctrl.beta[c]
        y0, y1 = Ys[c], Ys[c + 1]
        v0, v1 = velocity(spec, y0, a, b), velocity(spec, y1, a, b)
        ym = _hermite_mid(y0, y1, v0, v1, h)
        k1 = costate_rhs(spec, y1, P, a, b)
        k2 = costate_rhs(spec, ym, P - 0.5 * h * k1, a, b)
        k3 = costate_rhs(spec, ym, P - 0.5 * h * k2, a, b)
        k4 = costate_rhs(spec, y0, P - h * k3, a, b)
        P0 = P - (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(P0)):
            raise IntegrationError(f"non-finite costate on cell {c}")
        g0, g1 = costate_rhs(spec, y0, P0, a, b), k1
        y_mid[c] = ym
        p_mid[c] = _hermite_mid(P0, P, g0, g1, h)
        ps[c] = P0
        P = P0
    return LiftedTrajectory(traj.times, Ys, ps, y_mid, p_mid)


# Hamiltonian functionals on one lifted ensemble ------------------------------


def interaction_content(spec: ProblemSpec, Y: np.ndarray, P: np.ndarray) -> float:
    """(1/(2N^2)) sum_{k,j} (p_k - p_j).g(y_k - y_j)."""
    N, n = Y.shape
    G = spec.kernel((Y[:, None, :] - Y[None, :, :]).reshape(-1, n)).reshape(N, N, n)
    dP = P[:, None, :] - P[None, :, :]
    return float(0.5 * np.einsum("kja,kja->", dP, G) / N**2)


def interaction_content_plain(spec: ProblemSpec, Y: np.ndarray, P: np.ndarray) -> float:
    """(1/N^2) sum_{k,j} p_k.g(y_k - y_j), the non-symmetrised form."""
    N, n = Y.shape
    G = spec.kernel((Y[:, None, :] - Y[None, :, :]).reshape(-1, n)).reshape(N, N, n)
    return float(np.einsum("ka,kja->", P, G) / N**2)


def drift_content(spec: ProblemSpec, Y: np.ndarray, P: np.ndarray) -> float:
    return interaction_content(spec, Y, P) + float(np.mean(np.sum(P * spec.f0(Y), axis=1)))


def control_content(spec: ProblemSpec, Y: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Vector of (1/N) sum_k p_k.f_i(y_k), i = 1..m."""
    F = control_fields(spec, Y)
    return np.einsum("ika,ka->i", F, P) / Y.shape[0]


def hamiltonian_H1(spec: ProblemSpec, Y, P, lam: float) -> float:
    return drift_content(spec, np.atleast_2d(Y), np.atleast_2d(P)) + lam


def hamiltonian_H0(spec: ProblemSpec, Y, P) -> float:
    return float(np.max(np.abs(control_content(spec, np.atleast_2d(Y), np.atleast_2d(P)))))


def hamiltonian_total(spec: ProblemSpec, Y, P, lam: float, a: float, b) -> float:
    Y, P = np.atleast_2d(Y), np.atleast_2d(P)
    b = np.atleast_1d(np.asarray(b, dtype=float))
    return a * (drift_content(spec, Y, P) + lam) + float(b @ control_content(spec, Y, P))


def vertices_of_A(m: int) -> list[tuple[float, np.ndarray]]:
    """The 2m + 1 extreme points of A (the origin is not extreme)."""
    verts = [(1.0, np.zeros(m))]
    for i in range(m):
        for sgn in (1.0, -1.0):
            b = np.zeros(m)
            b[i] = sgn
            verts.append((0.0, b))
    return verts


# cell-averaged coefficients ---------------------------------------------------


@dataclass(frozen=True)
class CellHamiltonian:
    """Cell averages (Simpson) of H_drift and of the H_i, i = 1..m."""

    h0: np.ndarray  # (cells,)
    h: np.ndarray  # (cells, m)
    ds: float

    @property
    def cells(self) -> int:
        return self.h0.size

    @property
    def S(self) -> float:
        return self.cells * self.ds

    @property
    def impulsive(self) -> np.ndarray:
        """max_i |H_i| per cell."""
        return np.max(np.abs(self.h), axis=1)

    def value(self, lam: float, alpha, beta) -> np.ndarray:
        """Cellwise H(gamma, lambda, alpha_c, beta_c)."""
        return np.asarray(alpha) * (self.h0 + lam) + np.sum(np.asarray(beta) * self.h, axis=1)

    def maximum(self, lam: float) -> np.ndarray:
        return np.maximum(self.h0 + lam, self.impulsive)


def cell_hamiltonians(spec: ProblemSpec, lifted: LiftedTrajectory) -> CellHamiltonian:
    nodes0 = np.array([drift_content(spec, Y, P) for Y, P in zip(lifted.y, lifted.p)])
    mids0 = np.array([drift_content(spec, Y, P) for Y, P in zip(lifted.y_mid, lifted.p_mid)])
    nodes = np.array([control_content(spec, Y, P) for Y, P in zip(lifted.y, lifted.p)])
    mids = np.array([control_content(spec, Y, P) for Y, P in zip(lifted.y_mid, lifted.p_mid)])
    h0 = (nodes0[:-1] + 4 * mids0 + nodes0[1:]) / 6.0
    h = (nodes[:-1] + 4 * mids + nodes[1:]) / 6.0
    ds = float(lifted.times[1] - lifted.times[0])
    return CellHamiltonian(h0, h, ds)


def control_gradient(hc: CellHamiltonian) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the terminal cost w.r.t. the cell values of (alpha, beta)."""
    return -hc.ds * hc.h0, -hc.ds * hc.h


def node_hamiltonians(spec: ProblemSpec, lifted: LiftedTrajectory, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """H1 and H0 at every grid node."""
    H1 = np.array([hamiltonian_H1(spec, Y, P, lam) for Y, P in zip(lifted.y, lifted.p)])
    H0 = np.array([hamiltonian_H0(spec, Y, P) for Y, P in zip(lifted.y, lifted.p)])
    return H1, H0


def hamiltonian_trace_csv(spec: ProblemSpec, lifted: LiftedTrajectory, ctrl: ReducedControl, lam: float) -> str:
    H1, H0 = node_hamiltonians(spec, lifted, lam)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["s", "H1", "H0", "Htotal"])
    for j, s in enumerate(lifted.times):
        c = min(j, ctrl.cells - 1)
        Y, P = lifted.pairs(j)
        Ht = hamiltonian_total(spec, Y, P, lam, ctrl.alpha[c], ctrl.beta[c])
        writer.writerow([repr(float(s)), repr(float(H1[j])), repr(float(H0[j])), repr(float(Ht))])
    return buf.getvalue()

