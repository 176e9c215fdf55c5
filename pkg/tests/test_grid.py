import math

import numpy as np
import pytest
from scipy.integrate import quad

from hslab.errors import ChartError, ParameterError
from hslab.grid import (
    AxisymmetricDomain,
    BoundaryGraph,
    GridFunction,
    build_grid,
    dirichlet_energy,
    discrete_pde_residual,
    flattening_map,
    graded_nodes,
    inverse_flattening_map,
    load_grid_function,
    mean_curvature,
    save_grid_function,
    sphere_area,
    weighted_integral,
)
from hslab.model import Pole, ProblemSpec


def test_sphere_area():
    assert sphere_area(1) == pytest.approx(2 * math.pi)
    assert sphere_area(2) == pytest.approx(4 * math.pi)


def test_flattening_examples():
    g = BoundaryGraph(1.0, 0.4)
    x = np.array([0.1, 0.0, 0.05])
    np.testing.assert_allclose(flattening_map(x, g), [0.1, 0.0, 0.04], atol=1e-16)
    bnd = np.array([0.2, 0.1, 0.05])
    assert flattening_map(bnd, g)[-1] == pytest.approx(0.0, abs=1e-16)
    flat = BoundaryGraph(0.0, 1.0)
    np.testing.assert_array_equal(flattening_map(x, flat), x)


def test_flattening_inverse_and_chart():
    g = BoundaryGraph(-0.5, 0.9)
    x = np.array([[0.3, 0.1, 0.2], [-0.5, 0.4, 0.0]])
    np.testing.assert_allclose(inverse_flattening_map(flattening_map(x, g), g), x, atol=1e-14)
    with pytest.raises(ChartError):
        flattening_map(np.array([0.9, 0.0, 0.1]), g)


def test_boundary_graph_chart_constraint():
    with pytest.raises(ParameterError):
        BoundaryGraph(-0.5, 1.0)


def test_mean_curvature():
    assert mean_curvature(BoundaryGraph(0.0, 1.0), 3) == 0.0
    for N in (3, 4, 7):
        assert mean_curvature(BoundaryGraph(-0.3, 1.0), N) == pytest.approx(-0.3)


def test_domain_scaling_rescales_curvature():
    d = AxisymmetricDomain.curved_cap(3, -0.5, 0.9).scaled(10.0)
    assert d.alpha == pytest.approx(-0.05) and d.Rmax == pytest.approx(9.0)


def test_uniform_grading():
    r = graded_nodes(2.0, 10, 1.0)
    np.testing.assert_allclose(np.diff(r), 0.2)
    with pytest.raises(ParameterError):
        graded_nodes(1.0, 4)


def test_half_ball_measure():
    d = AxisymmetricDomain.half_ball(3, 1.0)
    exact = 2 * math.pi / 3
    errs = []
    for n in (8, 16, 32):
        g = build_grid(d, n, n)
        errs.append(abs(g.node_volumes().sum() - exact))
    assert errs[-1] < 0.01 * exact
    assert errs[0] < 1e-12 or errs[0] / errs[1] >= 3.0


@pytest.mark.parametrize("N", [3, 4])
def test_weighted_integral_constant(N):
    d = AxisymmetricDomain.half_ball(N, 1.0)
    g = build_grid(d, 32, 24)
    one = GridFunction(g, np.ones(g.shape))
    assert weighted_integral(one) == pytest.approx(d.measure(), rel=0.01)


def test_weighted_integral_hardy_weight_converges():
    # int_{B_1^+} |x|^-1 in R^3 reduces to a radial integral
    ref = 0.5 * sphere_area(2) * quad(lambda r: r ** (2 - 1), 0.0, 1.0)[0]
    errs = []
    for n in (16, 32):
        g = build_grid(AxisymmetricDomain.half_ball(3, 1.0), n, n)
        one = GridFunction(g, np.ones(g.shape))
        errs.append(abs(weighted_integral(one, 1.0) - ref))
    assert ref == pytest.approx(math.pi)
    assert errs[-1] < 0.01 * ref


def test_zero_field():
    g = build_grid(AxisymmetricDomain.half_ball(3, 1.0), 16, 16)
    z = GridFunction(g, np.zeros(g.shape))
    assert weighted_integral(z, 1.0) == 0.0
    assert dirichlet_energy(z) == 0.0
    spec = ProblemSpec(3, (Pole(1.0, 0.0),))
    assert np.all(discrete_pde_residual(z, spec).values == 0.0)


def test_harmonic_field_residual_shrinks():
    # u = z is harmonic; with a zero nonlinearity the residual is the truncation error
    spec = ProblemSpec(3, (Pole(0.0, 0.0),))
    norms = []
    for n in (16, 32):
        g = build_grid(AxisymmetricDomain.half_ball(3, 1.0), n, n, gamma=1.0)
        rho, z = g.physical_coordinates()
        res = discrete_pde_residual(GridFunction(g, z * (1.0 + 0.0 * rho)), spec).values
        inner = np.hypot(rho, z) > 0.2
        norms.append(np.max(np.abs(res[inner])))
    assert norms[1] < 1e-8 or norms[0] / norms[1] > 3.0


def test_save_load_round_trip(tmp_path):
    d = AxisymmetricDomain.curved_cap(3, -0.4, 0.8)
    g = build_grid(d, 12, 10)
    rho, z = g.physical_coordinates()
    u = GridFunction(g, np.exp(-rho) * np.sin(3 * z) + 1.0 / 3.0)
    path = tmp_path / "u.txt"
    save_grid_function(u, path)
    v = load_grid_function(path)
    np.testing.assert_array_equal(v.values, u.values)
    np.testing.assert_array_equal(v.grid.r, g.r)
    assert v.grid.domain == d
