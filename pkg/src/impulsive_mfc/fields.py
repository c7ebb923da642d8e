"""Control-affine nonlocal vector fields.

Every field is a small immutable object evaluated on a batch of points
``X`` of shape ``(N, n)`` (a single point of shape ``(n,)`` also works) and
carrying an analytic Jacobian.  Fields are built from JSON descriptors of the
form ``{"kind": ..., "params": {...}}``; see ``FIELD_KINDS`` and ``COST_KINDS``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .measures import EmpiricalMeasure


class ConfigError(ValueError):
    """Invalid problem or field configuration."""


def _batch(X) -> tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    return np.atleast_2d(X), single


class Field:
    """Base class: subclasses implement ``_eval`` and ``_jac`` on (N, n) arrays."""

    kind = "base"
    bounded = True

    def __init__(self, n: int):
        self.n = int(n)

    def __call__(self, X) -> np.ndarray:
        X2, single = _batch(X)
        out = self._eval(X2)
        return out[0] if single else out

    def jacobian(self, X) -> np.ndarray:
        X2, single = _batch(X)
        out = self._jac(X2)
        return out[0] if single else out

    def descriptor(self) -> dict:
        return {"kind": self.kind, "params": self.params()}

    def params(self) -> dict:
        return {}

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.params()})"


class ZeroField(Field):
    kind = "zero"

    def _eval(self, X):
        return np.zeros_like(X)

    def _jac(self, X):
        return np.zeros((X.shape[0], self.n, self.n))


class ConstantField(Field):
    kind = "constant"

    def __init__(self, value: Sequence[float]):
        self.value = np.atleast_1d(np.asarray(value, dtype=float))
        super().__init__(self.value.size)

    def _eval(self, X):
        return np.broadcast_to(self.value, X.shape).copy()

    def _jac(self, X):
        return np.zeros((X.shape[0], self.n, self.n))

    def params(self):
        return {"value": self.value.tolist()}


class LinearField(Field):
    """f(x) = A x + b.  Unbounded unless A = 0."""

    kind = "linear"

    def __init__(self, matrix, offset=None):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        n = self.matrix.shape[0]
        if self.matrix.shape != (n, n):
            raise ConfigError(f"linear field needs a square matrix, got {self.matrix.shape}")
        self.offset = np.zeros(n) if offset is None else np.atleast_1d(np.asarray(offset, dtype=float))
        super().__init__(n)
        self.bounded = not np.any(self.matrix)

    def _eval(self, X):
        return X @ self.matrix.T + self.offset

    def _jac(self, X):
        return np.broadcast_to(self.matrix, (X.shape[0], self.n, self.n)).copy()

    def params(self):
        return {"matrix": self.matrix.tolist(), "offset": self.offset.tolist()}


class TanhField(Field):
    """Linear-with-saturation: f(x) = scale * tanh(W x + bias) + offset (componentwise)."""

    kind = "tanh"

    def __init__(self, n: int | None = None, weight=None, bias=None, scale=1.0, offset=0.0):
        if weight is None:
            if n is None:
                raise ConfigError("tanh field needs either n or a weight matrix")
            weight = np.eye(n)
        self.weight = np.atleast_2d(np.asarray(weight, dtype=float))
        n = self.weight.shape[0]
        super().__init__(n)
        self.bias = np.broadcast_to(np.asarray(0.0 if bias is None else bias, dtype=float), (n,)).copy()
        self.scale = np.broadcast_to(np.asarray(scale, dtype=float), (n,)).copy()
        self.offset = np.broadcast_to(np.asarray(offset, dtype=float), (n,)).copy()

    def _eval(self, X):
        return self.scale * np.tanh(X @ self.weight.T + self.bias) + self.offset

    def _jac(self, X):
        z = X @ self.weight.T + self.bias
        d = self.scale / np.cosh(z) ** 2
        return d[:, :, None] * self.weight[None, :, :]

    def params(self):
        return {
            "weight": self.weight.tolist(),
            "bias": self.bias.tolist(),
            "scale": self.scale.tolist(),
            "offset": self.offset.tolist(),
        }


class AttractionRepulsionKernel(Field):
    """g(x) = grad_x U(|x|_2^2) with U(r) = -c_A exp(-r/l_A) + c_R exp(-r/l_R)."""

    kind = "attraction_repulsion"

    def __init__(self, n: int, c_A: float, l_A: float, c_R: float, l_R: float):
        super().__init__(n)
        if min(c_A, l_A, c_R, l_R) <= 0:
            raise ConfigError("attraction-repulsion parameters must be positive")
        c, l = c_R / c_A, l_R / l_A
        if not (c > 1 and l < 1 and c * l * l < 1):
            raise ConfigError(
                f"inadmissible attraction-repulsion parameters: need c_R/c_A > 1, "
                f"l_R/l_A < 1 and (c_R/c_A)(l_R/l_A)^2 < 1, got c={c:g}, l={l:g}"
            )
        self.c_A, self.l_A, self.c_R, self.l_R = float(c_A), float(l_A), float(c_R), float(l_R)

    def _dU(self, r):
        return self.c_A / self.l_A * np.exp(-r / self.l_A) - self.c_R / self.l_R * np.exp(-r / self.l_R)

    def _d2U(self, r):
        return -self.c_A / self.l_A**2 * np.exp(-r / self.l_A) + self.c_R / self.l_R**2 * np.exp(-r / self.l_R)

    def _eval(self, X):
        r = np.sum(X * X, axis=1)
        return 2.0 * self._dU(r)[:, None] * X

    def _jac(self, X):
        r = np.sum(X * X, axis=1)
        eye = np.eye(self.n)[None]
        outer = X[:, :, None] * X[:, None, :]
        return 2.0 * self._dU(r)[:, None, None] * eye + 4.0 * self._d2U(r)[:, None, None] * outer

    def params(self):
        return {"c_A": self.c_A, "l_A": self.l_A, "c_R": self.c_R, "l_R": self.l_R}


def builtin_attraction_repulsion(c_A: float, l_A: float, c_R: float, l_R: float, n: int = 1) -> AttractionRepulsionKernel:
    return AttractionRepulsionKernel(n, c_A, l_A, c_R, l_R)


FIELD_KINDS = {
    "zero": lambda n, p: ZeroField(n),
    "constant": lambda n, p: ConstantField(p["value"]),
    "linear": lambda n, p: LinearField(p["matrix"], p.get("offset")),
    "tanh": lambda n, p: TanhField(
        n=n, weight=p.get("weight"), bias=p.get("bias"), scale=p.get("scale", 1.0), offset=p.get("offset", 0.0)
    ),
    "attraction_repulsion": lambda n, p: AttractionRepulsionKernel(n, p["c_A"], p["l_A"], p["c_R"], p["l_R"]),
}


def field_from_descriptor(desc: dict, n: int) -> Field:
    kind = desc.get("kind")
    if kind not in FIELD_KINDS:
        raise ConfigError(f"unknown field kind {kind!r}; expected one of {sorted(FIELD_KINDS)}")
    try:
        f = FIELD_KINDS[kind](n, desc.get("params", {}))
    except KeyError as exc:
        raise ConfigError(f"field {kind!r} is missing parameter {exc.args[0]!r}") from None
    if f.n != n:
        raise ConfigError(f"field {kind!r} has dimension {f.n}, problem has n={n}")
    return f


# terminal costs -----------------------------------------------------------


class Cost:
    kind = "base"
    bounded = True

    def __init__(self, n: int):
        self.n = int(n)

    def value(self, X) -> np.ndarray:
        X2, single = _batch(X)
        out = self._value(X2)
        return out[0] if single else out

    def grad(self, X) -> np.ndarray:
        X2, single = _batch(X)
        out = self._grad(X2)
        return out[0] if single else out

    __call__ = value

    def descriptor(self) -> dict:
        return {"kind": self.kind, "params": self.params()}

    def params(self) -> dict:
        return {}


class ZeroCost(Cost):
    kind = "zero"

    def _value(self, X):
        return np.zeros(X.shape[0])

    def _grad(self, X):
        return np.zeros_like(X)


class TanhCost(Cost):
    """l(x) = scale * tanh(w . x + bias)."""

    kind = "tanh"

    def __init__(self, n: int, weight=None, bias: float = 0.0, scale: float = 1.0):
        super().__init__(n)
        self.weight = np.ones(n) if weight is None else np.atleast_1d(np.asarray(weight, dtype=float))
        self.bias, self.scale = float(bias), float(scale)

    def _value(self, X):
        return self.scale * np.tanh(X @ self.weight + self.bias)

    def _grad(self, X):
        z = X @ self.weight + self.bias
        return (self.scale / np.cosh(z) ** 2)[:, None] * self.weight

    def params(self):
        return {"weight": self.weight.tolist(), "bias": self.bias, "scale": self.scale}


class GaussianWellCost(Cost):
    """l(x) = -depth * exp(-|x - center|_2^2 / (2 width^2))."""

    kind = "gaussian_well"

    def __init__(self, n: int, center=None, width: float = 1.0, depth: float = 1.0):
        super().__init__(n)
        self.center = np.zeros(n) if center is None else np.atleast_1d(np.asarray(center, dtype=float))
        self.width, self.depth = float(width), float(depth)

    def _value(self, X):
        d2 = np.sum((X - self.center) ** 2, axis=1)
        return -self.depth * np.exp(-d2 / (2 * self.width**2))

    def _grad(self, X):
        diff = X - self.center
        d2 = np.sum(diff**2, axis=1)
        return (self.depth / self.width**2 * np.exp(-d2 / (2 * self.width**2)))[:, None] * diff

    def params(self):
        return {"center": self.center.tolist(), "width": self.width, "depth": self.depth}


class LinearCost(Cost):
    kind = "linear"
    bounded = False

    def __init__(self, n: int, weight=None, bias: float = 0.0):
        super().__init__(n)
        self.weight = np.ones(n) if weight is None else np.atleast_1d(np.asarray(weight, dtype=float))
        self.bias = float(bias)

    def _value(self, X):
        return X @ self.weight + self.bias

    def _grad(self, X):
        return np.broadcast_to(self.weight, X.shape).copy()

    def params(self):
        return {"weight": self.weight.tolist(), "bias": self.bias}


class QuadraticCost(Cost):
    """l(x) = 0.5 * weight * |x - center|_2^2."""

    kind = "quadratic"
    bounded = False

    def __init__(self, n: int, center=None, weight: float = 1.0):
        super().__init__(n)
        self.center = np.zeros(n) if center is None else np.atleast_1d(np.asarray(center, dtype=float))
        self.weight = float(weight)

    def _value(self, X):
        return 0.5 * self.weight * np.sum((X - self.center) ** 2, axis=1)

    def _grad(self, X):
        return self.weight * (X - self.center)

    def params(self):
        return {"center": self.center.tolist(), "weight": self.weight}


COST_KINDS = {
    "zero": lambda n, p: ZeroCost(n),
    "tanh": lambda n, p: TanhCost(n, p.get("weight"), p.get("bias", 0.0), p.get("scale", 1.0)),
    "gaussian_well": lambda n, p: GaussianWellCost(n, p.get("center"), p.get("width", 1.0), p.get("depth", 1.0)),
    "linear": lambda n, p: LinearCost(n, p.get("weight"), p.get("bias", 0.0)),
    "quadratic": lambda n, p: QuadraticCost(n, p.get("center"), p.get("weight", 1.0)),
}


def cost_from_descriptor(desc: dict, n: int) -> Cost:
    kind = desc.get("kind")
    if kind not in COST_KINDS:
        raise ConfigError(f"unknown cost kind {kind!r}; expected one of {sorted(COST_KINDS)}")
    return COST_KINDS[kind](n, desc.get("params", {}))


# problem ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Data of the impulsive control problem for the nonlocal transport equation.

    ``controls`` holds f_1..f_m; ``C`` and ``L`` are the declared sup-norm and
    Lipschitz bounds of the fields (spot-checked, never proven).
    """

    f0: Field
    controls: tuple
    kernel: Field
    cost: Cost
    T: float
    M: float
    theta: EmpiricalMeasure
    C: float = 1.0
    L: float = 1.0
    relax_a3: bool = False
    name: str = "problem"
    check_samples: int = 64
    sample_seed: int = 0
    bound_report: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "controls", tuple(self.controls))
        n = self.theta.n
        if not self.T > 0:
            raise ConfigError(f"horizon T must be positive, got {self.T}")
        if not self.M > 0:
            raise ConfigError(f"budget M must be positive, got {self.M}")
        if len(self.controls) < 1:
            raise ConfigError("at least one control field is required (m >= 1)")
        for name, f in [("f0", self.f0), ("kernel", self.kernel), ("cost", self.cost), *[(f"f{i + 1}", f) for i, f in enumerate(self.controls)]]:
            if f.n != n:
                raise ConfigError(f"{name} has dimension {f.n}, initial cloud has n={n}")
        if not self.cost.bounded and not self.relax_a3:
            raise ConfigError(
                f"cost {self.cost.kind!r} is unbounded; set relax_a3 to allow it"
            )
        rng = np.random.default_rng(self.sample_seed)
        scale = 1.0 + np.max(np.abs(self.theta.points))
        xs = rng.uniform(-2 * scale, 2 * scale, size=(self.check_samples, n))
        gp, gm = self.kernel(xs), self.kernel(-xs)
        if not np.allclose(gp, -gm, rtol=1e-10, atol=1e-12):
            raise ConfigError("kernel g is not antisymmetric: g(-x) != -g(x) on sampled points")
        object.__setattr__(self, "bound_report", check_bounds(self, np.vstack([xs, self.theta.points])))

    @property
    def n(self) -> int:
        return self.theta.n

    @property
    def m(self) -> int:
        return len(self.controls)

    @property
    def S(self) -> float:
        return self.T + self.M

    @property
    def N(self) -> int:
        return self.theta.N

    def with_theta(self, theta: EmpiricalMeasure) -> "ProblemSpec":
        return ProblemSpec(
            self.f0, self.controls, self.kernel, self.cost, self.T, self.M, theta,
            self.C, self.L, self.relax_a3, self.name, self.check_samples, self.sample_seed,
        )


def check_bounds(spec: ProblemSpec, points: np.ndarray) -> dict:
    """Largest field magnitudes on ``points`` versus the declared constant C."""
    points = np.atleast_2d(points)
    sup = {"f0": float(np.max(np.abs(spec.f0(points)).sum(axis=1)))}
    for i, f in enumerate(spec.controls, start=1):
        sup[f"f{i}"] = float(np.max(np.abs(f(points)).sum(axis=1)))
    diffs = (points[:, None, :] - points[None, :, :]).reshape(-1, spec.n)
    sup["g"] = float(np.max(np.abs(spec.kernel(diffs)).sum(axis=1)))
    return {"sup": sup, "violated": sorted(k for k, v in sup.items() if v > spec.C * (1 + 1e-12))}


# evaluation ---------------------------------------------------------------


def interaction(kernel: Field, Y: np.ndarray, workers: int = 1) -> np.ndarray:
    """Rows of (1/N) sum_j g(y_k - y_j) for every particle k."""
    N, n = Y.shape

    def rows(sl):
        diffs = Y[sl, None, :] - Y[None, :, :]
        return kernel(diffs.reshape(-1, n)).reshape(-1, N, n).mean(axis=1)

    if workers <= 1 or N < 2 * workers:
        return rows(slice(None))
    bounds = np.linspace(0, N, workers + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(rows, [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]))
    return np.vstack(parts)


def drift(spec: ProblemSpec, Y: np.ndarray, workers: int = 1) -> np.ndarray:
    """f_0(y_k) + (g * nu)(y_k) for the cloud ``Y``."""
    return spec.f0(Y) + interaction(spec.kernel, Y, workers)


def control_fields(spec: ProblemSpec, Y: np.ndarray) -> np.ndarray:
    """Array of shape (m, N, n) with f_i(y_k)."""
    return np.stack([f(Y) for f in spec.controls])


def velocity(spec: ProblemSpec, Y: np.ndarray, a: float, b, workers: int = 1) -> np.ndarray:
    b = np.atleast_1d(np.asarray(b, dtype=float))
    out = a * drift(spec, Y, workers) if a != 0.0 else np.zeros_like(Y)
    for bi, f in zip(b, spec.controls):
        if bi != 0.0:
            out = out + bi * f(Y)
    return out


def eval_field(spec: ProblemSpec, m: EmpiricalMeasure, ctrl, x) -> np.ndarray:
    """w = a (f_0(x) + (g*mu)(x)) + sum_i b_i f_i(x) at one point x."""
    a, b = ctrl
    x = np.atleast_1d(np.asarray(x, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    conv = spec.kernel(x[None, :] - m.points).mean(axis=0)
    w = a * (spec.f0(x) + conv)
    for bi, f in zip(b, spec.controls):
        w = w + bi * f(x)
    return w


def lie_bracket(fi: Field, fj: Field, X) -> np.ndarray:
    """[f_i, f_j](x) = Df_i(x) f_j(x) - Df_j(x) f_i(x)."""
    X2, single = _batch(X)
    out = np.einsum("kab,kb->ka", fi.jacobian(X2), fj(X2)) - np.einsum("kab,kb->ka", fj.jacobian(X2), fi(X2))
    return out[0] if single else out


def commutator_defect(spec: ProblemSpec, i: int, j: int, samples) -> float:
    """Max Manhattan norm of [f_i, f_j] over ``samples`` (indices are 1-based)."""
    if not (1 <= i <= spec.m and 1 <= j <= spec.m):
        raise IndexError(f"control field indices must lie in 1..{spec.m}")
    if i == j:
        return 0.0
    pts = np.asarray(samples, dtype=float).reshape(-1, spec.n)
    br = lie_bracket(spec.controls[i - 1], spec.controls[j - 1], pts)
    return float(np.max(np.abs(br).sum(axis=1)))
