"""Reduced (reparametrized) control system on [0, S], S = T + M.

Controls are piecewise constant on a uniform grid of ``[0, S]``: a time-speed
``alpha`` and control intensities ``beta`` with ``alpha >= 0``,
``alpha + sum|beta_i| <= 1`` and ``sum(alpha) * ds = T``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .fields import ProblemSpec, velocity
from .measures import EmpiricalMeasure


class ConstraintError(ValueError):
    """A control violates its pointwise set or its integral constraint."""


class IntegrationError(FloatingPointError):
    """Non-finite state or costate met during integration."""


A_SET_TOL = 1e-12


def default_tol_T(S: float) -> float:
    return 1e-9 * S


def rk4_step(rhs, y: np.ndarray, h: float) -> np.ndarray:
    k1 = rhs(y)
    k2 = rhs(y + 0.5 * h * k1)
    k3 = rhs(y + 0.5 * h * k2)
    k4 = rhs(y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass(frozen=True, eq=False)
class ReducedControl:
    S: float
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float).reshape(-1)
        beta = np.array(self.beta, dtype=float)
        if beta.ndim == 1:
            beta = beta.reshape(-1, 1)
        if beta.shape[0] != alpha.size:
            raise ConstraintError(f"alpha has {alpha.size} cells, beta has {beta.shape[0]}")
        alpha.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "S", float(self.S))

    @property
    def cells(self) -> int:
        return self.alpha.size

    @property
    def m(self) -> int:
        return self.beta.shape[1]

    @property
    def ds(self) -> float:
        return self.S / self.cells

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.S, self.cells + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.cells) + 0.5) * self.ds

    @property
    def intensity(self) -> np.ndarray:
        """alpha + sum_i |beta_i| per cell."""
        return self.alpha + np.abs(self.beta).sum(axis=1)

    def time_integral(self) -> float:
        return float(self.alpha.sum() * self.ds)

    def check(self, T: float, tol_T: float | None = None) -> None:
        tol_T = default_tol_T(self.S) if tol_T is None else tol_T
        if np.any(self.alpha < -A_SET_TOL):
            c = int(np.argmin(self.alpha))
            raise ConstraintError(f"alpha < 0 on cell {c}")
        over = self.intensity - 1.0
        if np.any(over > A_SET_TOL):
            c = int(np.argmax(over))
            raise ConstraintError(f"alpha + |beta| = {self.intensity[c]:.15g} > 1 on cell {c}")
        err = abs(self.time_integral() - T)
        if err > tol_T:
            raise ConstraintError(f"|int alpha - T| = {err:.3g} exceeds tol_T = {tol_T:.3g}")

    def is_admissible(self, T: float, tol_T: float | None = None) -> bool:
        try:
            self.check(T, tol_T)
        except ConstraintError:
            return False
        return True

    def combine(self, other: "ReducedControl", tau: float) -> "ReducedControl":
        """The convex combination (1 - tau) * self + tau * other."""
        return ReducedControl(
            self.S, (1 - tau) * self.alpha + tau * other.alpha, (1 - tau) * self.beta + tau * other.beta
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["cell", "s_mid", "alpha", *[f"beta{i + 1}" for i in range(self.m)]])
        for c, (s, a, b) in enumerate(zip(self.midpoints, self.alpha, self.beta)):
            writer.writerow([c, repr(float(s)), repr(float(a)), *[repr(float(v)) for v in b]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, S: float | None = None) -> "ReducedControl":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        body = np.array([[float(v) for v in r] for r in rows[1:]])
        if S is None:
            S = body[-1, 1] + body[0, 1]
        return cls(S, body[:, 2], body[:, 3:])

    @classmethod
    def uniform(cls, T: float, M: float, cells: int, m: int) -> "ReducedControl":
        """alpha = T/S, beta = 0 everywhere: the drift-only start."""
        S = T + M
        return cls(S, np.full(cells, T / S), np.zeros((cells, m)))


@dataclass(frozen=True, eq=False)
class PiecewiseControl:
    """Original control u: [0, T] -> R^m, constant on each piece."""

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.array(self.breakpoints, dtype=float).reshape(-1)
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 1)
        if t.size != v.shape[0] + 1 or np.any(np.diff(t) <= 0) or t[0] != 0.0:
            raise ConstraintError("breakpoints must start at 0, increase strictly and number pieces + 1")
        object.__setattr__(self, "breakpoints", t)
        object.__setattr__(self, "values", v)

    @property
    def T(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def durations(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def total_variation(self) -> float:
        """int_0^T sum_i |u_i(t)| dt."""
        return float(np.sum(np.abs(self.values).sum(axis=1) * self.durations))

    def cumulative(self, t) -> np.ndarray:
        """F_u(t) = int_0^t u."""
        nodes = np.vstack([np.zeros(self.m), np.cumsum(self.values * self.durations[:, None], axis=0)])
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.stack([np.interp(t, self.breakpoints, nodes[:, i]) for i in range(self.m)], axis=-1)

    def __call__(self, t: float) -> np.ndarray:
        k = int(np.clip(np.searchsorted(self.breakpoints, t, side="right") - 1, 0, self.values.shape[0] - 1))
        return self.values[k]

    @classmethod
    def constant(cls, T: float, value) -> "PiecewiseControl":
        return cls([0.0, T], [np.atleast_1d(np.asarray(value, dtype=float))])


def _cell_average(edges: np.ndarray, values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Cell averages on ``grid`` of a piecewise-constant function given on ``edges``."""
    values = values.reshape(values.shape[0], -1)
    cum = np.vstack([np.zeros(values.shape[1]), np.cumsum(values * np.diff(edges)[:, None], axis=0)])
    at_grid = np.stack([np.interp(grid, edges, cum[:, j]) for j in range(values.shape[1])], axis=1)
    return np.diff(at_grid, axis=0) / np.diff(grid)[:, None]


def embed_control(
    u: PiecewiseControl,
    M: float,
    cells: int,
    tol_T: float | None = None,
    allow_slack: bool = False,
) -> ReducedControl:
    """Map an original control with int|u| = M to its reduced image.

    On the image of each piece alpha = 1/(1+|u|), beta = u/(1+|u|); the exact
    image is then cell-averaged onto ``cells`` uniform cells of [0, T+M], which
    keeps int alpha = T.  With ``allow_slack`` a budget shortfall becomes a
    dead-time tail (alpha = beta = 0).
    """
    T = u.T
    S = T + M
    tol_T = default_tol_T(S) if tol_T is None else tol_T
    V = u.total_variation()
    if V > M + tol_T or (V < M - tol_T and not allow_slack):
        raise ConstraintError(f"int |u| = {V:.12g} differs from budget M = {M:.12g}")
    speed = 1.0 + np.abs(u.values).sum(axis=1)
    edges = np.concatenate([[0.0], np.cumsum(u.durations * speed)])
    alpha = 1.0 / speed
    beta = u.values / speed[:, None]
    if S - edges[-1] > tol_T:
        edges = np.append(edges, S)
        alpha = np.append(alpha, 0.0)
        beta = np.vstack([beta, np.zeros(u.m)])
    else:
        edges[-1] = S
    grid = np.linspace(0.0, S, cells + 1)
    vals = np.column_stack([alpha, beta])
    avg = _cell_average(edges, vals, grid)
    return ReducedControl(S, avg[:, 0], avg[:, 1:])


def saturate_budget(u: PiecewiseControl, M: float, k: int, component: int = 0, tol: float = 1e-12) -> PiecewiseControl:
    """Spend the unused budget M - int|u| as a vanishing pulse pair at t = 0.

    Component ``component`` gains +M_u k on [0, 1/(2k)] and -M_u k on
    (1/(2k), 1/k].  The total variation equals M exactly when that component
    of u vanishes on [0, 1/k]; in general it tends to M as k grows.
    """
    V = u.total_variation()
    if V > M + tol:
        raise ConstraintError(f"int |u| = {V:.12g} already exceeds M = {M:.12g}")
    Mu = M - V
    if Mu <= tol:
        return u
    if k < 1 or 1.0 / k > u.T:
        raise ConstraintError(f"pulse width 1/k = {1.0 / k:g} does not fit in [0, {u.T:g}]")
    h1, h2 = 0.5 / k, 1.0 / k
    t = np.union1d(u.breakpoints, [h1, h2])
    mids = 0.5 * (t[:-1] + t[1:])
    vals = np.array([u(s) for s in mids])
    vals[mids < h1, component] += Mu * k
    vals[(mids > h1) & (mids < h2), component] -= Mu * k
    return PiecewiseControl(t, vals)


def impulsive_limit_control(u: PiecewiseControl, M: float, cells: int, component: int = 0) -> ReducedControl:
    """Reduced control of the k -> infinity limit of ``saturate_budget``.

    The pulse pair becomes a fast block of reduced length M_u at s = 0 with
    alpha = 0 and beta = +e_i then -e_i, followed by the embedding of u.
    """
    T, V = u.T, u.total_variation()
    Mu = M - V
    S = T + M
    speed = 1.0 + np.abs(u.values).sum(axis=1)
    e = np.zeros(u.m)
    e[component] = 1.0
    edges = np.concatenate([[0.0, 0.5 * Mu, Mu], Mu + np.cumsum(u.durations * speed)])
    edges[-1] = S
    alpha = np.concatenate([[0.0, 0.0], 1.0 / speed])
    beta = np.vstack([e, -e, u.values / speed[:, None]])
    avg = _cell_average(edges, np.column_stack([alpha, beta]), np.linspace(0.0, S, cells + 1))
    return ReducedControl(S, avg[:, 0], avg[:, 1:])


@dataclass(frozen=True, eq=False)
class ParticleTrajectory:
    times: np.ndarray
    states: np.ndarray  # (nodes, N, n)

    @property
    def N(self) -> int:
        return self.states.shape[1]

    @property
    def n(self) -> int:
        return self.states.shape[2]

    def measure(self, j: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.states[j])

    @property
    def terminal(self) -> EmpiricalMeasure:
        return self.measure(-1)

    def to_csv(self, time_label: str = "s") -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([time_label, "k", *[f"y{i}" for i in range(self.n)]])
        for s, Y in zip(self.times, self.states):
            for k, y in enumerate(Y):
                writer.writerow([repr(float(s)), k, *[repr(float(v)) for v in y]])
        return buf.getvalue()


def solve_forward(spec: ProblemSpec, ctrl: ReducedControl, substeps: int = 1, workers: int = 1) -> ParticleTrajectory:
    """RK4 for the coupled particle system with controls frozen on each cell."""
    if ctrl.m != spec.m:
        raise ConstraintError(f"control has m={ctrl.m}, problem has m={spec.m}")
    h = ctrl.ds / substeps
    Y = np.array(spec.theta.points, dtype=float)
    states = np.empty((ctrl.cells + 1, *Y.shape))
    states[0] = Y
    for c in range(ctrl.cells):
        a, b = float(ctrl.alpha[c]), ctrl.beta[c]

        def rhs(Z, a=a, b=b):
            return velocity(spec, Z, a, b, workers)

        for _ in range(substeps):
            Y = rk4_step(rhs, Y, h)
        if not np.all(np.isfinite(Y)):
            raise IntegrationError(f"non-finite state on cell {c} (s in [{c * ctrl.ds:g}, {(c + 1) * ctrl.ds:g}])")
        states[c + 1] = Y
    return ParticleTrajectory(ctrl.grid, states)


def state_at(spec: ProblemSpec, ctrl: ReducedControl, traj: ParticleTrajectory, s: float) -> np.ndarray:
    """Ensemble state at an arbitrary s, by a partial RK4 step from the left node."""
    s = float(np.clip(s, 0.0, ctrl.S))
    c = min(int(math.floor(s / ctrl.ds)), ctrl.cells - 1)
    h = s - c * ctrl.ds
    if h <= 1e-15 * ctrl.S:
        return traj.states[c].copy()
    if ctrl.ds - h <= 1e-15 * ctrl.S:
        return traj.states[c + 1].copy()
    a, b = float(ctrl.alpha[c]), ctrl.beta[c]
    return rk4_step(lambda Z: velocity(spec, Z, a, b), traj.states[c], h)


def terminal_cost(spec: ProblemSpec, traj: ParticleTrajectory) -> float:
    return float(np.mean(spec.cost.value(traj.states[-1])))


def solve_original(
    spec: ProblemSpec,
    u: PiecewiseControl,
    max_step: float = 1e-3,
    t_eval=None,
    workers: int = 1,
) -> ParticleTrajectory:
    """Direct RK4 solve of the particle system on [0, T] driven by u.

    Steps are aligned with the pieces of u (and with ``t_eval``) and sized so
    that (1 + |u|) * dt <= max_step.  Returns states at the piece edges and
    requested times.
    """
    edges = u.breakpoints
    if t_eval is not None:
        edges = np.union1d(edges, np.clip(np.atleast_1d(t_eval), 0.0, u.T))
    Y = np.array(spec.theta.points, dtype=float)
    out = [Y]
    for t0, t1 in zip(edges[:-1], edges[1:]):
        val = u(0.5 * (t0 + t1))
        speed = 1.0 + np.abs(val).sum()
        steps = max(1, int(math.ceil((t1 - t0) * speed / max_step)))
        h = (t1 - t0) / steps

        def rhs(Z, val=val):
            return velocity(spec, Z, 1.0, val, workers)

        for _ in range(steps):
            Y = rk4_step(rhs, Y, h)
        if not np.all(np.isfinite(Y)):
            raise IntegrationError(f"non-finite state on [{t0:g}, {t1:g}]")
        out.append(Y)
    return ParticleTrajectory(edges, np.array(out))


def sample_trajectory(traj: ParticleTrajectory, t: float) -> EmpiricalMeasure:
    """Measure at a stored time (exact node match required, up to 1e-12)."""
    j = int(np.argmin(np.abs(traj.times - t)))
    if abs(traj.times[j] - t) > 1e-12 * max(1.0, abs(t)):
        raise KeyError(f"time {t} is not a stored node")
    return traj.measure(j)
