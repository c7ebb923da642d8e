"""Terminal cost and optimum versus grid size.

Shows fourth-order convergence of the forward solve for a fixed control, and
the optimized cost of the opinion scenario as the reduced grid is refined.

    python3 scripts/grid_convergence.py
"""

import numpy as np

from impulsive_mfc.config import build_spec, load_config
from impulsive_mfc.optimizer import frank_wolfe
from impulsive_mfc.reduced_system import PiecewiseControl, ReducedControl, embed_control, solve_forward, terminal_cost


def forward_order(spec, cells=(25, 50, 100, 200, 400)):
    u = PiecewiseControl([0.0, 1.0, 2.0], [[0.5], [0.5]])
    costs = [terminal_cost(spec, solve_forward(spec, embed_control(u, spec.M, c))) for c in cells]
    print("cells   terminal cost        ratio of successive differences")
    for i, (c, J) in enumerate(zip(cells, costs)):
        ratio = ""
        if 1 <= i < len(costs) - 1:
            ratio = f"{(costs[i - 1] - costs[i]) / (costs[i] - costs[i + 1]):.2f}"
        print(f"{c:5d}   {J:.14f}   {ratio}")


def optimum(spec, cells=(50, 100, 200, 400)):
    print("\ncells   optimal cost      residual   iterations")
    for c in cells:
        _, cert = frank_wolfe(spec, ReducedControl.uniform(spec.T, spec.M, c, spec.m))
        print(f"{c:5d}   {cert.cost:.12f}   {cert.residual:.1e}   {cert.iterations}")


if __name__ == "__main__":
    spec = build_spec(load_config("opinion1d"))
    np.set_printoptions(precision=6)
    forward_order(spec)
    optimum(spec)
