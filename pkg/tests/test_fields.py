import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from impulsive_mfc.fields import (
    AttractionRepulsionKernel,
    ConfigError,
    ConstantField,
    GaussianWellCost,
    LinearCost,
    LinearField,
    ProblemSpec,
    QuadraticCost,
    TanhCost,
    TanhField,
    ZeroCost,
    ZeroField,
    builtin_attraction_repulsion,
    commutator_defect,
    cost_from_descriptor,
    eval_field,
    field_from_descriptor,
    interaction,
    lie_bracket,
)
from impulsive_mfc.measures import EmpiricalMeasure

from conftest import planar, smooth1d


def fd_jacobian(f, X, h=1e-6):
    n = X.shape[1]
    J = np.empty((X.shape[0], n, n))
    for b in range(n):
        e = np.zeros(n)
        e[b] = h
        J[:, :, b] = (f(X + e) - f(X - e)) / (2 * h)
    return J


def builtin_fields(n, rng):
    return [
        ZeroField(n),
        ConstantField(rng.normal(size=n)),
        LinearField(rng.normal(size=(n, n)), rng.normal(size=n)),
        TanhField(n, weight=rng.normal(size=(n, n)), bias=rng.normal(size=n), scale=1.3, offset=0.2),
        AttractionRepulsionKernel(n, 1.0, 1.0, 1.5, 0.5),
        AttractionRepulsionKernel(n, 0.5, 2.0, 0.8, 1.4),
    ]


@pytest.mark.parametrize("n", [1, 2, 3])
def test_builtin_jacobians_match_finite_differences(n, rng):
    X = rng.uniform(-2, 2, size=(100, n))
    for f in builtin_fields(n, rng):
        J = f.jacobian(X)
        Jfd = fd_jacobian(f, X)
        scale = np.maximum(np.abs(J).max(axis=(1, 2)), 1e-3)[:, None, None]
        assert np.max(np.abs(J - Jfd) / scale) <= 1e-6, f.kind


def test_cost_gradients_match_finite_differences(rng):
    X = rng.uniform(-2, 2, size=(50, 2))
    costs = [
        ZeroCost(2),
        TanhCost(2, weight=[0.5, -1.0], bias=0.3, scale=2.0),
        GaussianWellCost(2, center=[0.5, 0.1], width=0.8, depth=1.5),
        LinearCost(2, weight=[1.0, 2.0]),
        QuadraticCost(2, center=[1.0, 0.0], weight=0.5),
    ]
    for c in costs:
        G = np.stack([(c.value(X + e) - c.value(X - e)) / 2e-6 for e in np.eye(2) * 1e-6], axis=1)
        assert np.allclose(c.grad(X), G, atol=1e-7), c.kind


def test_fields_accept_single_points():
    f = TanhField(2, scale=2.0)
    assert f(np.array([0.1, 0.2])).shape == (2,)
    assert f.jacobian(np.array([0.1, 0.2])).shape == (2, 2)


def test_eval_field_zero_control():
    spec = smooth1d(N=3)
    assert np.all(eval_field(spec, spec.theta, (0.0, [0.0]), [0.7]) == 0.0)


def test_eval_field_constant_control_field():
    spec = ProblemSpec(ZeroField(1), [ConstantField([1.0])], ZeroField(1), TanhCost(1), 1.0, 1.0, EmpiricalMeasure([0.0]))
    for a in (0.0, 0.2, 0.5):
        assert eval_field(spec, spec.theta, (a, [0.5]), [3.0]) == pytest.approx([0.5])


def test_eval_field_hand_example():
    spec = ProblemSpec(
        LinearField([[-1.0]]), [ConstantField([1.0])], LinearField([[-1.0]]), TanhCost(1), 1.0, 1.0,
        EmpiricalMeasure([0.0]),
    )
    assert eval_field(spec, EmpiricalMeasure([1.0, 3.0]), (1.0, [0.0]), [1.0]) == pytest.approx([0.0])


@given(
    st.floats(0, 1), st.floats(0, 1), st.floats(-1, 1), st.floats(0, 1), st.floats(-1, 1),
    arrays(float, 2, elements=st.floats(-3, 3)),
)
def test_eval_field_is_affine_in_controls(lam, a1, b1, a2, b2, x):
    spec = planar(N=5)
    c1, c2 = (a1, [b1, -b1 / 2]), (a2, [b2, b2 / 3])
    mixed = (lam * a1 + (1 - lam) * a2, lam * np.array(c1[1]) + (1 - lam) * np.array(c2[1]))
    lhs = eval_field(spec, spec.theta, mixed, x)
    rhs = lam * eval_field(spec, spec.theta, c1, x) + (1 - lam) * eval_field(spec, spec.theta, c2, x)
    assert np.allclose(lhs, rhs, rtol=1e-13, atol=1e-13)


def test_attraction_repulsion_properties(rng):
    g = builtin_attraction_repulsion(1.0, 1.0, 1.5, 0.5, n=2)
    assert np.all(g(np.zeros(2)) == 0.0)
    X = rng.normal(size=(50, 2))
    assert np.allclose(g(-X), -g(X), rtol=0, atol=1e-15)


@pytest.mark.parametrize("params", [(1.0, 1.0, 0.9, 0.5), (1.0, 1.0, 1.5, 1.2), (1.0, 1.0, 3.0, 0.9)])
def test_attraction_repulsion_admissibility(params):
    with pytest.raises(ConfigError):
        builtin_attraction_repulsion(*params)


@given(arrays(float, st.tuples(st.integers(1, 12), st.just(2)), elements=st.floats(-5, 5)))
def test_antisymmetric_kernel_interactions_cancel(Y):
    g = AttractionRepulsionKernel(2, 1.0, 1.0, 1.5, 0.5)
    total = interaction(g, Y).sum(axis=0)
    assert np.allclose(total, 0.0, atol=1e-12 * max(1, len(Y)))


def test_interaction_workers_are_deterministic(rng):
    g = AttractionRepulsionKernel(2, 1.0, 1.0, 1.5, 0.5)
    Y = rng.normal(size=(40, 2))
    assert np.array_equal(interaction(g, Y, workers=1), interaction(g, Y, workers=4))


def test_commutator_examples():
    spec = ProblemSpec(
        ZeroField(1), [LinearField([[1.0]]), ConstantField([1.0]), ConstantField([2.0])], ZeroField(1),
        TanhCost(1), 1.0, 1.0, EmpiricalMeasure([0.0]),
    )
    samples = [[-1.0], [0.0], [2.5]]
    assert commutator_defect(spec, 2, 3, samples) == 0.0
    assert commutator_defect(spec, 1, 1, samples) == 0.0
    assert commutator_defect(spec, 1, 2, samples) == pytest.approx(1.0)
    with pytest.raises(IndexError):
        commutator_defect(spec, 0, 1, samples)


def test_lie_bracket_antisymmetric(rng):
    f, h = TanhField(2, scale=1.0, weight=rng.normal(size=(2, 2))), LinearField(rng.normal(size=(2, 2)))
    X = rng.normal(size=(10, 2))
    assert np.allclose(lie_bracket(f, h, X), -lie_bracket(h, f, X))


def test_problem_spec_validation():
    theta = EmpiricalMeasure([0.0])
    base = dict(f0=ZeroField(1), controls=[ConstantField([1.0])], kernel=ZeroField(1), cost=TanhCost(1), theta=theta)
    with pytest.raises(ConfigError):
        ProblemSpec(T=0.0, M=1.0, **base)
    with pytest.raises(ConfigError):
        ProblemSpec(T=1.0, M=-1.0, **base)
    with pytest.raises(ConfigError):
        ProblemSpec(T=1.0, M=1.0, **{**base, "controls": []})
    with pytest.raises(ConfigError):
        ProblemSpec(T=1.0, M=1.0, **{**base, "kernel": ConstantField([1.0])})
    with pytest.raises(ConfigError):
        ProblemSpec(T=1.0, M=1.0, **{**base, "f0": ZeroField(2)})
    with pytest.raises(ConfigError):
        ProblemSpec(T=1.0, M=1.0, **{**base, "cost": LinearCost(1)})
    spec = ProblemSpec(T=1.0, M=2.0, relax_a3=True, **{**base, "cost": LinearCost(1)})
    assert spec.S == 3.0 and spec.n == 1 and spec.m == 1 and spec.N == 1


def test_declared_bounds_are_spot_checked():
    spec = ProblemSpec(
        LinearField([[-1.0]]), [ConstantField([1.0])], ZeroField(1), TanhCost(1), 1.0, 1.0, EmpiricalMeasure([0.0]), C=1.0
    )
    assert "f0" in spec.bound_report["violated"]
    assert smooth1d().bound_report["violated"] == []


def test_descriptor_roundtrip(rng):
    for f in builtin_fields(2, rng):
        g = field_from_descriptor(f.descriptor(), 2)
        X = rng.normal(size=(5, 2))
        assert np.allclose(f(X), g(X))
    c = GaussianWellCost(2, center=[1.0, 2.0], width=0.3)
    assert np.allclose(cost_from_descriptor(c.descriptor(), 2).value(np.ones((1, 2))), c.value(np.ones((1, 2))))
    with pytest.raises(ConfigError):
        field_from_descriptor({"kind": "nope"}, 1)
    with pytest.raises(ConfigError):
        field_from_descriptor({"kind": "constant", "params": {"value": [1.0, 2.0]}}, 1)
    with pytest.raises(ConfigError):
        field_from_descriptor({"kind": "constant"}, 1)
