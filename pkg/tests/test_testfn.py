import numpy as np
import pytest

from hslab.errors import ChartError, ParameterError, SweepRangeError
from hslab.grid import BoundaryGraph, mean_curvature
from hslab.model import ProblemSpec
from hslab.oracle import sobolev_threshold
from hslab.testfn import (
    BubbleSpec,
    TestFunctionSpec,
    bookkeeping_check,
    bubble_calibration,
    bubble_threshold_check,
    build_test_function,
    default_ladder,
    energy_sweep,
    expansion_shifts,
    lemma41_gap,
    quintic_cutoff,
    test_grid as make_test_grid,
)

CAP = BoundaryGraph(-0.5, 0.9)
FLAT = BoundaryGraph(0.0, 0.9)


def test_quintic_cutoff_shape():
    r = np.linspace(0.0, 2.0, 401)
    eta = quintic_cutoff(r, 1.0)
    assert np.all(eta[r <= 0.5] == 1.0) and np.all(eta[r >= 1.0] == 0.0)
    assert np.all(np.diff(eta) <= 0.0)
    h = 1e-5
    for edge in (0.5, 1.0):
        d1 = (quintic_cutoff(edge + h, 1.0) - quintic_cutoff(edge - h, 1.0)) / (2 * h)
        assert abs(d1) < 1e-8


def test_spec_guards(entire_small):
    with pytest.raises(ChartError):
        TestFunctionSpec(entire_small, BoundaryGraph(-0.5, 0.5), 1e-3, 0.9)
    with pytest.raises(ParameterError):
        TestFunctionSpec(entire_small, CAP, 0.9 / (10 * entire_small.Rmax) * 1.01, 0.9)


def test_flat_test_function_restricts_profile(entire_small):
    eps = default_ladder(0.9, entire_small.Rmax)[1]
    ts = TestFunctionSpec(entire_small, FLAT, eps, 0.9)
    g = make_test_grid(ts)
    u = build_test_function(ts, g)
    rho, z = g.physical_coordinates()
    core = np.hypot(rho, z) < 0.45 / eps
    np.testing.assert_allclose(u.values[core], entire_small.evaluate(rho[core], z[core]), rtol=1e-12, atol=1e-14)


def test_curved_test_function_vanishes_on_boundary(entire_small):
    eps = default_ladder(0.9, entire_small.Rmax)[0]
    ts = TestFunctionSpec(entire_small, CAP, eps, 0.9)
    g = make_test_grid(ts)
    u = build_test_function(ts, g)
    assert np.all(u.values[g.dirichlet_mask] == 0.0)
    assert u.max() > 0


def test_sweep_on_flat_profile_peaks_at_one(entire_small):
    eps = default_ladder(0.9, entire_small.Rmax)[3]
    ts = TestFunctionSpec(entire_small, FLAT, eps, 0.9)
    u = build_test_function(ts, make_test_grid(ts))
    sw = energy_sweep(u, entire_small.spec)
    assert sw.tAtMax == pytest.approx(1.0, abs=1e-2)
    assert sw.maxPhi == pytest.approx(entire_small.c1, abs=5e-3)
    with pytest.raises(SweepRangeError):
        energy_sweep(u, entire_small.spec, np.geomspace(1.5, 5.0, 50))


def test_gap_positive_with_half_curvature_slope(entire_small):
    fit = lemma41_gap(entire_small, CAP)
    assert not fit.counterexamples
    assert all(g > 0 for g in fit.gaps)
    assert fit.H == mean_curvature(CAP, 3)
    assert fit.slope == pytest.approx(fit.half_expected, rel=0.05)


def test_gap_slope_vanishes_when_flat(entire_small):
    fit = lemma41_gap(entire_small, FLAT)
    curved = -0.5 * CAP.alpha * fit.K1
    assert abs(fit.slope) < 0.02 * curved


def test_ladder_validation(entire_small):
    base = default_ladder(0.9, entire_small.Rmax)
    with pytest.raises(ParameterError):
        lemma41_gap(entire_small, CAP, base[:3])
    with pytest.raises(ParameterError):
        lemma41_gap(entire_small, CAP, [base[0], base[1], base[2] * 0.9, base[3]])


def test_expansion_shifts_match_constants(entire_small):
    # pins the curvature convention through the Dirichlet-integral shift
    sh = expansion_shifts(entire_small, CAP, 0.015)
    rel = sh.relative_errors()
    assert rel[0] < 0.1 and rel[1] < 0.05 and rel[2] < 0.05


def test_bubble_spec_guards():
    with pytest.raises(ParameterError):
        BubbleSpec(0.5, 8.0, 0.6)
    assert BubbleSpec(0.5, 0.5, 0.4).inconclusive


@pytest.mark.parametrize("N,p", [(3, 2.5), (4, 2.0), (4, 3.0)])
def test_bubble_check_rejects_outside_regime(N, p):
    with pytest.raises(ParameterError):
        bubble_threshold_check(ProblemSpec.perturbed(N, 1.0, p), [4.0, 8.0])


def test_bubble_threshold_margins():
    spec = ProblemSpec.perturbed(4, 1.0, 2.5)
    recs = bubble_threshold_check(spec, [16.0, 32.0], n_r=96, n_theta=96)
    assert recs[0].threshold == pytest.approx(sobolev_threshold(4))
    assert all(r.below for r in recs)
    assert recs[1].margin > recs[0].margin


def test_bubble_calibration_saturates_threshold():
    value, threshold = bubble_calibration(4)
    assert threshold == pytest.approx(sobolev_threshold(4))
    assert value == pytest.approx(threshold, rel=0.01)


def test_bookkeeping_balance():
    bk = bookkeeping_check(ProblemSpec.perturbed(4, 1.0, 2.5))
    assert bk.defect < 0.02
