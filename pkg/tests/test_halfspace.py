import json
import math

import numpy as np
import pytest

from hslab.errors import ParameterError, RegimeError, RmaxTooSmallError
from hslab.grid import AxisymmetricDomain, GridFunction, build_grid, sphere_area
from hslab.halfspace import (
    curvature_constants,
    decay_fit,
    export_entire,
    kelvin_nodes,
    kelvin_symmetry_check,
    least_energy_check,
    norm_floor,
    solve_entire,
    tail_bound,
    truncated_check,
    truncated_level,
)
from hslab.model import ProblemSpec
from hslab.oracle import bubble


@pytest.fixture(scope="module")
def far_grid():
    return build_grid(AxisymmetricDomain.half_space(3, 10.0), 96, 48, gamma=1.0)


def test_entire_solution_invariants(entire_small):
    sol = entire_small
    assert sol.c1 > 0
    assert sol.K1 > 0 and sol.K2 > 0 and sol.K3 >= 0
    assert sol.decayExponent <= -(sol.N - 1) + 0.3
    assert sol.dirichlet >= norm_floor(sol.spec)
    # level of the default 160x96 solve
    assert sol.c1 == pytest.approx(6.9254, abs=2e-3)


def test_entire_negative_lambda_signs():
    sol = solve_entire(ProblemSpec.two_pole(3, 1.5, 0.5, -1.0), n_r=96, n_theta=64, verify=False)
    assert sol.K2 < 0 and sol.K3 >= 0 and sol.K1 > 0
    assert sol.c1 == pytest.approx(9.7224, rel=2e-3)


def test_zero_lambda_gives_zero_k2():
    sol = solve_entire(ProblemSpec.two_pole(3, 1.0, 0.5, 0.0), n_r=96, n_theta=64, verify=False)
    assert sol.K2 == 0.0


def test_pure_sobolev_case_is_not_an_existence_regime():
    with pytest.raises(RegimeError):
        solve_entire(ProblemSpec.two_pole(4, 1.0, 0.0, 0.0), n_r=64, n_theta=48, verify=False)


def test_evaluate_is_kelvin_symmetric(entire_small):
    sol = entire_small
    rho = np.array([0.3, 0.1, 1.2])
    z = np.array([0.4, 0.9, 0.5])
    r2 = rho**2 + z**2
    inside = sol.evaluate(rho, z)
    outside = sol.evaluate(rho / r2, z / r2) * r2 ** (-(sol.N - 2) / 2)
    np.testing.assert_allclose(outside, inside, rtol=1e-10)


def test_truncated_level_converges(entire_small):
    sol = entire_small
    c = [truncated_level(sol, R) for R in (10.0, 20.0, 40.0)]
    assert abs(c[2] - sol.c1) < abs(c[0] - sol.c1)
    assert abs(c[1] - c[2]) <= tail_bound(decay_fit(sol, Rmax=20.0).C, 20.0, sol.N)


def test_truncated_resolve_matches(entire_small):
    c_trunc, dev = truncated_check(entire_small, Rmax=10.0)
    assert c_trunc == pytest.approx(entire_small.c1, rel=0.02)
    assert dev < 1e-2


def test_kelvin_check_accepts_bubble_and_rejects_asymmetric(far_grid):
    b = bubble(3, 1.0, (0.0, 0.0), far_grid)
    rho, z = far_grid.physical_coordinates()
    assert kelvin_symmetry_check(b) < 1e-3
    bad = GridFunction(far_grid, z * np.exp(-(rho**2 + (z - 1.5) ** 2)))
    assert kelvin_symmetry_check(bad) > 0.1


def test_decay_fit_exact_power_law(far_grid):
    rho, z = far_grid.physical_coordinates()
    r = np.maximum(np.hypot(rho, z), 1e-12)
    v = GridFunction(far_grid, 2.0 * (z / r) * r ** (1 - 3))
    fit = decay_fit(v)
    assert fit.exponent == pytest.approx(-2.0, abs=1e-3)
    assert fit.accepted


def test_decay_fit_bubble_and_constant(far_grid):
    fit = decay_fit(bubble(3, 1.0, (0.0, 0.0), far_grid))
    assert fit.exponent == pytest.approx(-1.0, abs=0.03)
    assert not fit.accepted
    const = GridFunction(far_grid, np.ones(far_grid.shape))
    assert decay_fit(const).inconclusive


def test_decay_fit_needs_rmax_for_kelvin_field(entire_small):
    with pytest.raises(ParameterError):
        decay_fit(entire_small.profile)


def test_tail_bound_formula():
    assert tail_bound(2.0, 10.0, 3) == pytest.approx(4.0 / 10.0 * 0.5 * 4 * math.pi)
    assert tail_bound(1.0, 20.0, 4) == pytest.approx(20.0**-2 * 0.5 * sphere_area(3))


def test_small_rmax_rejected(entire_small):
    with pytest.raises(RmaxTooSmallError):
        curvature_constants(entire_small, Rmax=1.5)


def test_kelvin_nodes():
    r = np.linspace(0.0, 1.0, 11)
    nodes = kelvin_nodes(r, 5.0)
    assert nodes[-1] == 5.0 and np.all(np.diff(nodes) > 0)
    np.testing.assert_allclose(nodes[nodes > 1.0][:-1], 1.0 / r[(r > 0.2) & (r < 1.0)][::-1])


def test_least_energy_over_starts():
    recs = least_energy_check(ProblemSpec.two_pole(3, 1.5, 0.5, 0.5), n_r=48, n_theta=32)
    levels = [r["c1"] for r in recs if r["converged"]]
    assert len(levels) >= 3
    assert max(levels) - min(levels) < 1e-3 * min(levels)


def test_export(entire_small, tmp_path):
    prof, summ = export_entire(entire_small, tmp_path)
    data = json.loads(summ.read_text())
    assert data["c1"] == entire_small.c1
    assert prof.exists()
