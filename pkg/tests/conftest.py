import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from impulsive_mfc.fields import (
    AttractionRepulsionKernel,
    ConstantField,
    GaussianWellCost,
    LinearField,
    ProblemSpec,
    TanhCost,
    TanhField,
    ZeroField,
)
from impulsive_mfc.measures import EmpiricalMeasure

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def shift1d(N=1, T=1.0, M=1.0):
    return ProblemSpec(ZeroField(1), [ConstantField([1.0])], ZeroField(1), TanhCost(1), T, M, EmpiricalMeasure(np.zeros((N, 1))))


def smooth1d(N=10, seed=0, T=1.0, M=1.0, center=0.8):
    """Random smooth scenario with attraction-repulsion interaction."""
    rng = np.random.default_rng(seed)
    return ProblemSpec(
        TanhField(1, weight=[[0.7]], bias=[0.1], scale=-0.5),
        [TanhField(1, weight=[[0.5]], bias=[0.2], scale=0.5, offset=0.5)],
        AttractionRepulsionKernel(1, 1.0, 1.0, 1.5, 0.5),
        GaussianWellCost(1, center=[center], width=0.7),
        T, M, EmpiricalMeasure(rng.normal(0.0, 0.5, (N, 1))),
        C=2.0, L=3.0,
    )


def linear_decay1d(x0=(1.0,), T=1.0, M=1.0):
    """f_0(x) = -x, g = 0, f_1 = 1; violates the declared sup bound on purpose."""
    return ProblemSpec(
        LinearField([[-1.0]]), [ConstantField([1.0])], ZeroField(1), TanhCost(1), T, M,
        EmpiricalMeasure(np.array(x0, dtype=float).reshape(-1, 1)),
    )


def planar(N=8, seed=1):
    rng = np.random.default_rng(seed)
    return ProblemSpec(
        ZeroField(2),
        [ConstantField([1.0, 0.0]), ConstantField([0.0, 1.0])],
        AttractionRepulsionKernel(2, 1.0, 1.0, 1.5, 0.5),
        GaussianWellCost(2, center=[2.5, 0.0], width=1.0),
        1.0, 1.5, EmpiricalMeasure(rng.uniform(-0.5, 0.5, (N, 2))),
        C=2.0, L=4.0,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def report(capsys):
    """Record and print one pass/fail line for an acceptance criterion, then assert it."""

    def _report(k: int, ok: bool, detail: str) -> None:
        line = f"[criterion {k}] {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE[k] = line
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
