import math

import numpy as np
import pytest

from hslab.errors import OracleFailure
from hslab.grid import AxisymmetricDomain, GridFunction, build_grid
from hslab.model import Pole, ProblemSpec
from hslab.oracle import (
    bubble,
    bubble_normalization,
    bubble_normalization_closed_form,
    bubble_profile,
    certify_all,
    certify_radial,
    hardy_sobolev_extremal,
    hs_profile,
    residual_oracle,
    sobolev_constant,
    sobolev_constant_closed_form,
    sobolev_threshold,
)


@pytest.mark.parametrize("N", [3, 4, 5])
def test_bubble_normalization_two_routes(N):
    assert bubble_normalization(N) == pytest.approx(bubble_normalization_closed_form(N), rel=1e-8)
    assert bubble_normalization_closed_form(N) == pytest.approx((N * (N - 2)) ** ((N - 2) / 4))


@pytest.mark.parametrize("N", [3, 4])
def test_sobolev_constant_two_routes(N):
    assert sobolev_constant(N) == pytest.approx(sobolev_constant_closed_form(N), rel=5e-3)


def test_sobolev_quotient_scale_invariant():
    assert sobolev_constant(3, mu=2.0) == pytest.approx(sobolev_constant(3, mu=1.0), rel=1e-6)


def test_threshold_values():
    # (1/N) S_N^(N/2) with S_N = N(N-2)/4 |S^N|^(2/N)
    for N in (3, 4):
        S = N * (N - 2) / 4 * (2 * math.pi ** ((N + 1) / 2) / math.gamma((N + 1) / 2)) ** (2 / N)
        assert sobolev_threshold(N) == pytest.approx(S ** (N / 2) / N, rel=1e-8)
    assert sobolev_threshold(4) == pytest.approx(26.3189, abs=1e-4)


def test_bubble_covariance():
    r = np.linspace(0.0, 3.0, 31)
    N, mu = 4, 2.5
    np.testing.assert_allclose(
        bubble_profile(r, N, mu), mu ** ((N - 2) / 2) * bubble_profile(mu * r, N, 1.0), rtol=1e-14
    )


def test_hs_profile_reduces_to_bubble_and_decays():
    r = np.linspace(0.0, 5.0, 11)
    np.testing.assert_allclose(hs_profile(r, 3, 0.0), bubble_profile(r, 3), rtol=1e-8)
    big = np.array([1e3, 2e3])
    v = hs_profile(big, 3, 1.0)
    assert math.log(v[1] / v[0]) / math.log(2.0) == pytest.approx(-1.0, abs=1e-3)


@pytest.mark.parametrize("N,s", [(3, 0.0), (3, 1.0), (4, 0.5), (4, 1.5)])
def test_radial_certification_order(N, s):
    cert = certify_radial(N, s)
    assert cert.certified and cert.order >= 1.5


def test_extremal_n3_s1_order_two():
    assert certify_radial(3, 1.0).order == pytest.approx(2.0, abs=0.3)


def test_radial_certification_rejects_wrong_profile():
    cert = certify_radial(3, 1.0, profile=lambda r: 1.01 * hs_profile(r, 3, 1.0))
    assert not cert.certified


def test_bubble_residual_certified():
    spec = ProblemSpec(3, (Pole(1.0, 0.0),))
    fields = []
    for n in (32, 64):
        g = build_grid(AxisymmetricDomain.half_space(3, 2.0), n, n, gamma=1.0)
        fields.append(bubble(3, 1.5, (0.0, 1.0), g))
    cert = residual_oracle(fields, spec)
    assert cert.certified and cert.order == pytest.approx(2.0, abs=0.4)


def test_zero_field_is_certified():
    spec = ProblemSpec(3, (Pole(1.0, 0.0),))
    fields = [GridFunction(build_grid(AxisymmetricDomain.half_ball(3, 1.0), n, n), np.zeros((n + 1, n + 1)))
              for n in (16, 32)]
    cert = residual_oracle(fields, spec)
    assert cert.certified and cert.norms == (0.0, 0.0)


def test_noisy_bubble_fails_certification():
    spec = ProblemSpec(3, (Pole(1.0, 0.0),))
    rng = np.random.default_rng(0)
    fields = []
    for n in (32, 64):
        g = build_grid(AxisymmetricDomain.half_space(3, 2.0), n, n, gamma=1.0)
        b = bubble(3, 1.5, (0.0, 1.0), g)
        fields.append(GridFunction(g, b.values * (1 + 0.01 * rng.normal(size=g.shape))).masked())
    with pytest.raises(OracleFailure):
        residual_oracle(fields, spec)


def test_hardy_sobolev_extremal_sampled():
    g = build_grid(AxisymmetricDomain.half_space(3, 2.0), 16, 16)
    u = hardy_sobolev_extremal(3, 1.0, g)
    rho, z = g.physical_coordinates()
    np.testing.assert_allclose(u.values, hs_profile(np.hypot(rho, z), 3, 1.0), rtol=1e-12)


def test_certify_all_summary():
    c = certify_all(4, (1.0,))
    d = c.to_dict()
    assert set(d) == {"N", "S_N", "C_N", "threshold", "certificationOrders"}
    assert all(v >= 1.5 for v in d["certificationOrders"].values())
