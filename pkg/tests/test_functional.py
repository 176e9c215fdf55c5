import math

import numpy as np
import pytest

from hslab.errors import NehariError, ParameterError
from hslab.functional import (
    concentration_bookkeeping,
    energy,
    energy_identities,
    gradient,
    level_formula,
    nehari_scale,
    pohozaev_residual,
    ray_energy,
    ray_maximizer,
)
from hslab.grid import AxisymmetricDomain, GridFunction, build_grid
from hslab.model import Pole, ProblemSpec
from hslab.oracle import bubble


@pytest.fixture(scope="module")
def grid():
    return build_grid(AxisymmetricDomain.half_ball(3, 1.0), 24, 20)


@pytest.fixture(scope="module")
def spec():
    return ProblemSpec.two_pole(3, 1.5, 0.5, -1.0, 0.1)


def smooth_field(grid, rng):
    rho, z = grid.physical_coordinates()
    c = rng.uniform(0.2, 0.8, 2)
    w = rng.uniform(0.2, 0.5)
    vals = rng.uniform(0.5, 2.0) * np.exp(-((rho - c[0] * 0.3) ** 2 + (z - c[1]) ** 2) / w**2)
    return GridFunction(grid, vals).masked()


def test_zero_field_energy_and_gradient(grid, spec):
    u = GridFunction(grid, np.zeros(grid.shape))
    e = energy(u, spec)
    assert e.A == 0.0 and all(b == 0.0 for b in e.B) and e.phi == 0.0 and e.nehari == 0.0
    assert np.all(gradient(u, spec).values == 0.0)
    assert float(pohozaev_residual(u, spec)) == 0.0


@pytest.mark.parametrize(
    "lam,A,B1,B2,expected",
    [
        (0.0, 2.0, 0.0, 1.0, math.sqrt(2.0)),
        (-1.0, 1.0, 1.0, 1.0, (1 + math.sqrt(5)) / 2),
        (1.0, 1.0, 1.0, 2.0, 0.5),
        (-1.0, 1.0, 1.0, 2.0, 1.0),
    ],
)
def test_ray_maximizer_examples(lam, A, B1, B2, expected):
    # exponents enter as q = p, the slope is A - lam B1 t^(p1-1) - B2 t^(p2-1)
    t = ray_maximizer(A, [lam, 1.0], [B1, B2], [2.0, 3.0])
    assert t == pytest.approx(expected, rel=1e-12)
    ts = np.linspace(0.0, 4.0 * expected, 2001)
    assert ray_energy(t, A, [lam, 1.0], [B1, B2], [2.0, 3.0]) >= np.max(
        ray_energy(ts, A, [lam, 1.0], [B1, B2], [2.0, 3.0])
    ) - 1e-14


def test_ray_energy_quartic_example():
    t = ray_maximizer(1.0, [1.0], [1.0], [3.0])
    assert t == pytest.approx(1.0)
    assert ray_energy(t, 1.0, [1.0], [1.0], [3.0]) == pytest.approx(0.25)


def test_ray_maximizer_errors():
    with pytest.raises(NehariError):
        ray_maximizer(0.0, [1.0], [1.0], [3.0])
    with pytest.raises(NehariError):
        ray_maximizer(1.0, [-1.0, 1.0], [1.0, 0.0], [2.0, 3.0])


def test_nehari_scale_covariance(grid, spec):
    u = smooth_field(grid, np.random.default_rng(3))
    t = nehari_scale(u, spec)
    assert nehari_scale(u.scaled(2.0), spec) == pytest.approx(t / 2.0, rel=1e-10)
    e = energy(u.scaled(t), spec)
    assert abs(e.nehari) < 1e-10 * e.A


def test_gradient_matches_finite_differences(grid, spec):
    rng = np.random.default_rng(11)
    ratios = []
    for _ in range(100):
        u = smooth_field(grid, rng)
        h = GridFunction(grid, rng.normal(size=grid.shape)).masked()
        g = float(np.sum(gradient(u, spec).values * h.values))
        errs = []
        for d in (1e-3, 5e-4):
            up = GridFunction(grid, u.values + d * h.values)
            um = GridFunction(grid, u.values - d * h.values)
            fd = (energy(up, spec).phi - energy(um, spec).phi) / (2 * d)
            errs.append(abs(fd - g))
        assert errs[0] <= 1e-6 * max(1.0, abs(g)) or errs[0] / max(errs[1], 1e-300) > 3.0
        ratios.append(errs[0] / max(abs(g), 1e-300))
    assert max(ratios) < 1e-4


def test_level_formula_matches_energy_on_nehari(grid, spec):
    u = smooth_field(grid, np.random.default_rng(5))
    u = u.scaled(nehari_scale(u, spec))
    res1, res2, c = energy_identities(u, spec, energy(u, spec).phi)
    assert res1 == 0.0
    assert res2 < 1e-9 * energy(u, spec).A
    assert c == pytest.approx(energy(u, spec).phi, rel=1e-9)
    assert level_formula(spec, 0.0, [0.0, 0.0]) == 0.0


def test_pohozaev_of_concentrating_bubble_vanishes():
    spec = ProblemSpec(3, (Pole(1.0, 0.0),))
    rel = []
    for mu, n in [(10.0, 64), (40.0, 256)]:
        g = build_grid(AxisymmetricDomain.half_ball(3, 1.0), n, n, gamma=1.0)
        u = bubble(3, mu, (0.0, 0.5), g)
        rel.append(abs(float(pohozaev_residual(u, spec))) / energy(u, spec).A)
    assert rel[1] < rel[0] / 5 and rel[1] < 1e-3


def test_pohozaev_rejects_off_origin_pole(grid):
    spec = ProblemSpec(3, (Pole(-1.0, 1.0, z=0.3), Pole(1.0, 0.0)))
    u = smooth_field(grid, np.random.default_rng(0))
    with pytest.raises(ParameterError):
        pohozaev_residual(u, spec)


def test_nonstar_domain_warns():
    g = build_grid(AxisymmetricDomain.curved_cap(3, -0.5, 0.9), 16, 12)
    spec = ProblemSpec.two_pole(3, 1.5, 0.5, 1.0, 0.1)
    u = smooth_field(g, np.random.default_rng(2))
    with pytest.warns(UserWarning):
        rep = pohozaev_residual(u, spec)
    assert not rep.starShaped


def test_bookkeeping_needs_perturbed(grid, spec):
    u = smooth_field(grid, np.random.default_rng(1))
    with pytest.raises(ParameterError):
        concentration_bookkeeping(u, spec)
    pert = ProblemSpec.perturbed(4, 1.0, 2.5)
    g4 = build_grid(AxisymmetricDomain.half_ball(4, 1.0), 16, 16)
    bk = concentration_bookkeeping(smooth_field(g4, np.random.default_rng(1)), pert)
    assert bk.A > 0 and bk.B > 0 and bk.C > 0 and bk.D > 0
    assert bk.phi == pytest.approx(bk.A / 2 + bk.B / 3.0 - bk.D / 3.5 - bk.C / 4.0)
