"""Uniform-weight empirical measures on R^n.

A cloud of N particles stands for the probability measure (1/N) sum_k delta_{x_k}.
Distances between clouds are Wasserstein-1 with the Manhattan ground cost.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist


class DimensionError(ValueError):
    """Raised when two measures (or a measure and a point) disagree in shape."""


def _as_points(points) -> np.ndarray:
    arr = np.array(points, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        # a flat list is read as N scalar particles
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DimensionError(f"points must be (N, n), got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError("an empirical measure needs N >= 1 particles in n >= 1 dimensions")
    return arr


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """N particles of weight 1/N each. Duplicate points are allowed."""

    points: np.ndarray

    def __post_init__(self):
        arr = _as_points(self.points)
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)

    @property
    def N(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[1]

    @property
    def mass(self) -> float:
        return 1.0

    def __len__(self) -> int:
        return self.N

    def __repr__(self) -> str:
        return f"EmpiricalMeasure(N={self.N}, n={self.n})"

    def same_multiset(self, other: "EmpiricalMeasure", atol: float = 0.0) -> bool:
        if self.points.shape != other.points.shape:
            return False
        a = self.points[np.lexsort(self.points.T[::-1])]
        b = other.points[np.lexsort(other.points.T[::-1])]
        return bool(np.all(np.abs(a - b) <= atol))

    # serialization -------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{i}" for i in range(self.n)])
        for row in self.points:
            writer.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EmpiricalMeasure":
        rows = list(csv.reader(io.StringIO(text)))
        if rows and rows[0] and not _is_number(rows[0][0]):
            rows = rows[1:]
        return cls(np.array([[float(v) for v in row] for row in rows if row]))

    def to_json(self) -> str:
        return json.dumps(self.points.tolist())

    @classmethod
    def from_json(cls, text: str) -> "EmpiricalMeasure":
        return cls(json.loads(text))


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _check_compatible(a: EmpiricalMeasure, b: EmpiricalMeasure) -> None:
    if a.N != b.N:
        raise DimensionError(f"particle counts differ: {a.N} != {b.N}")
    if a.n != b.n:
        raise DimensionError(f"dimensions differ: {a.n} != {b.n}")


def w1_distance(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Wasserstein-1 distance between two equal-size clouds.

    In one dimension the optimal plan pairs sorted points; otherwise the
    assignment problem is solved exactly.
    """
    _check_compatible(a, b)
    if a.n == 1:
        x = np.sort(a.points[:, 0])
        y = np.sort(b.points[:, 0])
        return float(np.mean(np.abs(x - y)))
    cost = cdist(a.points, b.points, metric="cityblock")
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / a.N)


def w1_points(x: np.ndarray, y: np.ndarray) -> float:
    return w1_distance(EmpiricalMeasure(x), EmpiricalMeasure(y))


def pushforward(m: EmpiricalMeasure, f: Callable[[np.ndarray], np.ndarray]) -> EmpiricalMeasure:
    return EmpiricalMeasure(np.array([np.atleast_1d(f(x)) for x in m.points], dtype=float))


def convolve(g: Callable[[np.ndarray], np.ndarray], m: EmpiricalMeasure, x: Sequence[float]) -> np.ndarray:
    """(g * mu)(x) = (1/N) sum_j g(x - y_j)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (m.n,):
        raise DimensionError(f"point has shape {x.shape}, measure lives in R^{m.n}")
    vals = np.array([np.atleast_1d(g(x - y)) for y in m.points], dtype=float)
    return vals.mean(axis=0)


def first_moment(m: EmpiricalMeasure) -> float:
    return float(np.mean(np.abs(m.points).sum(axis=1)))


def support_radius(m: EmpiricalMeasure) -> float:
    return float(np.max(np.linalg.norm(m.points, axis=1)))
