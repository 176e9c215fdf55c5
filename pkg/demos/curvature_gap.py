"""Energy gap of the curved-cap test functions for concave, flat and convex caps.

Run with ``python3 demos/curvature_gap.py``.
"""
from hslab.grid import BoundaryGraph, mean_curvature
from hslab.halfspace import solve_entire
from hslab.model import ProblemSpec
from hslab.testfn import lemma41_gap


def main() -> None:
    sol = solve_entire(ProblemSpec.two_pole(3, 1.5, 0.5, 0.5), Rmax=6.0, verify=False)
    print(f"c1 = {sol.c1:.6f}, K1 = {sol.K1:.6f}")
    for alpha in (-0.5, 0.0, 0.5):
        graph = BoundaryGraph(alpha, 0.9)
        fit = lemma41_gap(sol, graph)
        H = mean_curvature(graph, 3)
        gaps = ", ".join(f"{g:+.5f}" for g in fit.gaps)
        print(f"alpha={alpha:+.1f} H={H:+.2f}  gaps [{gaps}]  slope {fit.slope:+.4f}  -H*K1/2 {-0.5 * H * sol.K1:+.4f}")


if __name__ == "__main__":
    main()
