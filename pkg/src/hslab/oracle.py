"""Reference solutions and constants, each verified before use.

Nothing here is tabulated.  Normalisations are solved from the equation,
profiles are certified by a residual convergence test, and the Sobolev
constant is computed twice (radial quadrature and Gamma functions).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln

from .errors import OracleFailure, ParameterError
from .grid import Grid2D, GridFunction, discrete_pde_residual, sphere_area
from .model import critical_exponent

__all__ = [
    "OracleConstants",
    "bubble_profile",
    "bubble",
    "bubble_normalization",
    "bubble_normalization_closed_form",
    "hs_profile",
    "hardy_sobolev_norm",
    "hardy_sobolev_extremal",
    "radial_residual",
    "RadialCertificate",
    "certify_radial",
    "sobolev_constant",
    "sobolev_constant_closed_form",
    "sobolev_threshold",
    "hardy_sobolev_constant",
    "ResidualCertificate",
    "residual_oracle",
    "certify_all",
]


# ---------------------------------------------------------------------------
# Radial profiles and their normalisations
# ---------------------------------------------------------------------------


def _shape(r, N: int, s: float):
    """Unnormalised profile ``(1 + r^(2-s))^(-(N-2)/(2-s))``."""
    return (1.0 + np.asarray(r, dtype=float) ** (2.0 - s)) ** (-(N - 2.0) / (2.0 - s))


def _shape_lap_ratio(r: float, N: int, s: float, h: float = 1e-3) -> float:
    """``-Delta w / (w^p / r^s)`` for the unnormalised profile, by finite
    differences in ``x = log r`` (sixth-order stencils)."""
    p = critical_exponent(N, s) - 1.0
    x = math.log(r)
    k = np.arange(-3, 4)
    f = _shape(np.exp(x + k * h), N, s)
    d1 = np.array([-1, 9, -45, 0, 45, -9, 1]) / (60 * h)
    d2 = np.array([2, -27, 270, -490, 270, -27, 2]) / (180 * h * h)
    fx = d1 @ f
    fxx = d2 @ f
    lap = (fxx + (N - 2) * fx) / r**2
    return -lap / (f[3] ** p / r**s)


def _solve_normalization(N: int, s: float) -> float:
    """Constant ``c`` making ``c * shape`` solve ``Delta u + u^p/|x|^s = 0``.

    Substituting ``u = c w`` gives ``c^(p-1) = -Delta w |x|^s / w^p``; the
    ratio is sampled at several radii and must be constant.
    """
    p = critical_exponent(N, s) - 1.0
    samples = np.array([_shape_lap_ratio(r, N, s) for r in (0.3, 0.7, 1.0, 1.9, 4.0)])
    if np.ptp(samples) > 1e-7 * abs(samples.mean()):
        raise OracleFailure(f"profile ansatz is not a solution for N={N}, s={s}: {samples}")
    if not samples.mean() > 0:
        raise OracleFailure("normalisation equation has no positive root")
    return float(samples.mean() ** (1.0 / (p - 1.0)))


def bubble_normalization(N: int) -> float:
    """``C_N`` solved numerically from the critical equation."""
    return _solve_normalization(N, 0.0)


def bubble_normalization_closed_form(N: int) -> float:
    """``(N(N-2))^((N-2)/4)``, the hand-derived root of the same equation."""
    return (N * (N - 2.0)) ** ((N - 2.0) / 4.0)


def hardy_sobolev_norm(N: int, s: float) -> float:
    """Normalisation of the radial extremal ``c (1 + r^(2-s))^(-(N-2)/(2-s))``."""
    if not 0.0 <= s < 2.0:
        raise ParameterError("need 0 <= s < 2")
    return _solve_normalization(N, s)


def bubble_profile(r, N: int, mu: float = 1.0) -> np.ndarray:
    """``C_N (mu / (1 + mu^2 r^2))^((N-2)/2)`` as a function of distance."""
    r = np.asarray(r, dtype=float)
    return bubble_normalization_closed_form(N) * (mu / (1.0 + mu * mu * r * r)) ** ((N - 2.0) / 2.0)


def hs_profile(r, N: int, s: float) -> np.ndarray:
    return hardy_sobolev_norm(N, s) * _shape(r, N, s)


def _axis_center(y0) -> float:
    y = np.atleast_1d(np.asarray(y0, dtype=float))
    if y.size == 1:
        return float(y[0])
    if np.any(y[:-1] != 0.0):
        raise ParameterError("axisymmetric fields need the centre on the symmetry axis")
    return float(y[-1])


def bubble(N: int, mu: float, y0, grid: Grid2D) -> GridFunction:
    """Sample the standard bubble centred at ``y0`` (on the axis) on ``grid``.

    The field is not masked: it is a whole-space solution restricted to the
    grid nodes.
    """
    if N != grid.N:
        raise ParameterError("dimension mismatch")
    z0 = _axis_center(y0)
    rho, z = grid.physical_coordinates()
    return GridFunction(grid, bubble_profile(np.hypot(rho, z - z0), N, mu))


def hardy_sobolev_extremal(N: int, s: float, grid: Grid2D | None = None, certify: bool = True) -> GridFunction | None:
    """Radial solution of ``Delta u + u^(2*(s)-1)/|x|^s = 0`` centred at the origin.

    The profile is certified by :func:`certify_radial` first; failure raises
    :class:`OracleFailure`.
    """
    if certify:
        cert = certify_radial(N, s)
        if not cert.certified:
            raise OracleFailure(f"extremal for N={N}, s={s} failed certification: {cert}")
    if grid is None:
        return None
    rho, z = grid.physical_coordinates()
    return GridFunction(grid, hs_profile(np.hypot(rho, z), N, s))


# ---------------------------------------------------------------------------
# Independent 1D residual check
# ---------------------------------------------------------------------------


def radial_residual(profile, N: int, s: float, n: int, x_lo: float = -12.0, x_hi: float = 4.0) -> float:
    """Weighted L2 norm of ``u'' + (N-1)u'/r + u^p/r^s`` on a log-uniform grid.

    ``profile`` maps radii to values.  Derivatives are second-order central
    differences in ``x = log r``; the norm uses the measure ``r^(N-1) dr``.
    """
    p = critical_exponent(N, s) - 1.0
    x = np.linspace(x_lo, x_hi, n + 1)
    h = x[1] - x[0]
    r = np.exp(x)
    u = np.asarray(profile(r), dtype=float)
    ux = (u[2:] - u[:-2]) / (2 * h)
    uxx = (u[2:] - 2 * u[1:-1] + u[:-2]) / h**2
    ri = r[1:-1]
    lap = (uxx + (N - 2) * ux) / ri**2
    res = lap + np.maximum(u[1:-1], 0.0) ** p / ri**s
    # scale by r^2 so every term is O(u); measure r^(N-1) dr = r^N dx
    res = res * ri**2
    return float(math.sqrt(np.sum(res**2 * ri**N) * h))


@dataclass(frozen=True)
class RadialCertificate:
    N: int
    s: float
    residuals: tuple[float, float]
    order: float
    certified: bool


def certify_radial(N: int, s: float, profile=None, n: int = 400, min_order: float = 1.5) -> RadialCertificate:
    """Residual at ``n`` and ``2n`` log-intervals and the fitted order."""
    if profile is None:
        profile = (lambda r: bubble_profile(r, N)) if s == 0 else (lambda r: hs_profile(r, N, s))
    r1 = radial_residual(profile, N, s, n)
    r2 = radial_residual(profile, N, s, 2 * n)
    order = math.log(r1 / r2) / math.log(2.0) if r1 > 0 and r2 > 0 else float("inf")
    return RadialCertificate(N, s, (r1, r2), order, bool(order >= min_order))


# ---------------------------------------------------------------------------
# Sobolev constant
# ---------------------------------------------------------------------------


def _radial_integrals(N: int, mu: float, n: int, r_tail: float = 1e4) -> tuple[float, float]:
    """``int |grad w|^2`` and ``int w^(2N/(N-2))`` over R^N for the bubble.

    Trapezoid rule in ``x = log r`` up to ``r_tail`` plus the asymptotic tail.
    """
    C = bubble_normalization(N)
    x = np.linspace(math.log(1e-8 / mu), math.log(r_tail / mu), n + 1)
    r = np.exp(x)
    h = x[1] - x[0]
    a = (N - 2.0) / 2.0
    w = C * (mu / (1 + (mu * r) ** 2)) ** a
    dw = -C * a * mu**a * (1 + (mu * r) ** 2) ** (-a - 1) * 2 * mu * mu * r
    area = sphere_area(N - 1)
    f1 = dw**2 * r**N
    f2 = w ** (2 * N / (N - 2.0)) * r**N
    trap = lambda f: h * (f.sum() - 0.5 * (f[0] + f[-1]))
    A = area * trap(f1)
    B = area * trap(f2)
    # tails: w ~ C mu^(-a) r^(2-N)
    Rt = r[-1]
    amp = C * mu ** (-a)
    A += area * amp**2 * (N - 2) * Rt ** (2 - N)
    B += area * amp ** (2 * N / (N - 2.0)) * Rt ** (-N) / N
    return float(A), float(B)


def sobolev_constant(N: int, mu: float = 1.0, n: int = 4000, check: bool = True) -> float:
    """Rayleigh quotient of the bubble, ``int|grad w|^2 / (int w^2*)^(2/2*)``.

    Computed at ``n`` and ``2n`` points; the two must agree to 0.5%.
    """
    if N < 3:
        raise ParameterError("N must be >= 3")
    vals = []
    for m in ((n, 2 * n) if check else (n,)):
        A, B = _radial_integrals(N, mu, m)
        vals.append(A / B ** ((N - 2.0) / N))
    if check and abs(vals[0] - vals[1]) > 5e-3 * abs(vals[1]):
        raise OracleFailure(f"Sobolev quotient not resolved: {vals}")
    return float(vals[-1])


def sobolev_constant_closed_form(N: int) -> float:
    """``pi N (N-2) (Gamma(N/2)/Gamma(N))^(2/N)``."""
    return math.pi * N * (N - 2.0) * math.exp((2.0 / N) * (gammaln(N / 2.0) - gammaln(N)))


def sobolev_threshold(N: int) -> float:
    """Energy level ``S_N^(N/2)/N`` above which compactness is lost."""
    return sobolev_constant(N) ** (N / 2.0) / N


def hardy_sobolev_constant(N: int, s: float) -> float:
    """Rayleigh quotient of the radial extremal in the ``|x|^(-s)``-weighted norm.

    ``int |grad U|^2 / (int U^2*(s)/|x|^s)^(2/2*(s))`` over R^N, by adaptive
    radial quadrature.
    """
    c = hardy_sobolev_norm(N, s)
    b = (N - 2.0) / (2.0 - s)
    q = critical_exponent(N, s)
    area = sphere_area(N - 1)
    du = lambda r: -c * b * (1 + r ** (2 - s)) ** (-b - 1) * (2 - s) * r ** (1 - s)
    A = area * sum(quad(lambda r: du(r) ** 2 * r ** (N - 1), a, e, limit=200)[0] for a, e in ((0, 1), (1, np.inf)))
    B = area * sum(
        quad(lambda r: (c * _shape(r, N, s)) ** q * r ** (N - 1 - s), a, e, limit=200)[0] for a, e in ((0, 1), (1, np.inf))
    )
    return float(A / B ** (2.0 / q))


# ---------------------------------------------------------------------------
# Two-resolution certification of 2D fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResidualCertificate:
    norms: tuple[float, ...]
    order: float
    certified: bool


def _weighted_norm(res: GridFunction) -> float:
    vol = res.grid.node_volumes()
    return float(math.sqrt(np.sum(vol * res.values**2)))


def residual_oracle(fields, spec, min_order: float = 1.5, fail_below: float = 1.0) -> ResidualCertificate:
    """Certify fields sampled at two (or more) resolutions.

    ``fields`` lists the same field on successively finer grids with the same
    node pattern.  Returns the weighted L2 residual norms and the order fitted
    from the last two; a field is certified when the order is at least
    ``min_order``.  An order below ``fail_below`` raises :class:`OracleFailure`
    (a zero field is certified trivially).
    """
    norms = [_weighted_norm(discrete_pde_residual(f, spec)) for f in fields]
    if len(norms) < 2:
        raise ParameterError("need at least two resolutions")
    if all(n == 0.0 for n in norms):
        return ResidualCertificate(tuple(norms), float("inf"), True)
    h = [1.0 / (f.grid.shape[0] - 1) for f in fields]
    order = math.log(norms[-2] / norms[-1]) / math.log(h[-2] / h[-1])
    if not order >= fail_below:
        raise OracleFailure(f"residual order {order:.3g} below {fail_below}: norms {norms}")
    return ResidualCertificate(tuple(norms), float(order), bool(order >= min_order))


@dataclass(frozen=True)
class OracleConstants:
    """Certified constants for one dimension."""

    N: int
    S_N: float
    C_N: float
    threshold: float
    certificationOrders: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"N": self.N, "S_N": self.S_N, "C_N": self.C_N, "threshold": self.threshold,
                "certificationOrders": dict(self.certificationOrders)}


def certify_all(N: int, s_values=(1.0,)) -> OracleConstants:
    """Recompute and cross-check every oracle quantity for dimension ``N``.

    Raises :class:`OracleFailure` on any disagreement.
    """
    C = bubble_normalization(N)
    C_ref = bubble_normalization_closed_form(N)
    if abs(C - C_ref) > 1e-8 * C_ref:
        raise OracleFailure(f"bubble normalisation {C} differs from {C_ref}")
    S = sobolev_constant(N)
    S_ref = sobolev_constant_closed_form(N)
    if abs(S - S_ref) > 5e-3 * S_ref:
        raise OracleFailure(f"Sobolev constant {S} differs from {S_ref}")
    orders = {}
    cert = certify_radial(N, 0.0)
    if not cert.certified:
        raise OracleFailure(f"bubble certification failed: {cert}")
    orders["bubble"] = cert.order
    for s in s_values:
        c = certify_radial(N, s)
        if not c.certified:
            raise OracleFailure(f"extremal certification failed: {c}")
        orders[f"extremal_s={s:g}"] = c.order
    return OracleConstants(N, S, C, S ** (N / 2.0) / N, orders)
