"""Least-energy entire solutions on the half-space and their constants.

The half-space problem with every power critical is invariant under
dilations ``v -> sigma^{(N-2)/2} v(sigma y)``, so a truncated Dirichlet solve
has no preferred scale and drifts.  Least-energy entire solutions are, after
scaling, symmetric under the Kelvin reflection in the unit sphere; the solve
therefore runs on the unit half ball with the Robin condition that encodes
that symmetry (see :class:`~hslab.grid.AxisymmetricDomain`), and the profile
outside the ball is its exact Kelvin image.  Whole-space integrals follow
from the ball by the same reflection, so no truncation error enters ``c1``
or the curvature constants.  A nominal radius ``Rmax`` is still carried for
the tail, decay and truncation diagnostics.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ParameterError, RegimeError, RmaxTooSmallError
from .functional import Functional
from .grid import (
    AxisymmetricDomain,
    Grid2D,
    GridFunction,
    build_grid,
    save_grid_function,
    sphere_area,
)
from .model import ProblemSpec, critical_exponent
from .solver import SolveReport, SolverOptions, level_floor, minimize

__all__ = [
    "EntireSolution",
    "DecayFit",
    "solve_entire",
    "curvature_constants",
    "kelvin_symmetry_check",
    "decay_fit",
    "tail_bound",
    "truncated_level",
    "truncated_check",
    "least_energy_check",
    "norm_floor",
    "export_entire",
    "entire_initial_guess",
]


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecayFit:
    """Least-squares tail fit ``v ~ C |y|^exponent`` along rays.

    ``accepted`` holds when the exponent is at most ``-(N-1) + 0.3`` and the
    fit residual is small; otherwise the fit is ``inconclusive``.
    """

    C: float
    exponent: float
    residual: float
    accepted: bool

    @property
    def inconclusive(self) -> bool:
        return not self.accepted


@dataclass
class EntireSolution:
    """Half-space least-energy profile with its level and constants.

    ``profile`` lives on the Kelvin half ball; :meth:`evaluate` returns the
    profile anywhere in the half-space.
    """

    profile: GridFunction
    spec: ProblemSpec
    c1: float
    K1: float = float("nan")
    K2: float = float("nan")
    K3: float = float("nan")
    decayExponent: float = float("nan")
    kelvinDeviation: float = float("nan")
    Rmax: float = 50.0
    report: SolveReport | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return self.spec.N

    @property
    def dirichlet(self) -> float:
        """``int_{R^N_+} |grad v|^2``."""
        return 2.0 * self.report.energyBreakdown.A if self.report is not None else float("nan")

    def evaluate(self, rho, z) -> np.ndarray:
        return self.profile.evaluate(rho, z, outside="decay")

    def truncated(self, Rmax: float | None = None, n_r: int = 200, n_theta: int = 96) -> GridFunction:
        """The profile sampled on a truncated half-space grid (Dirichlet at ``Rmax``)."""
        R = self.Rmax if Rmax is None else Rmax
        grid = build_grid(AxisymmetricDomain.half_space(self.N, R), n_r, n_theta,
                          r_nodes=kelvin_nodes(self.profile.grid.r, R))
        rho, z = grid.physical_coordinates()
        return GridFunction(grid, self.evaluate(rho, z)).masked()

    def summary(self) -> dict:
        g = self.profile.grid
        return {
            "c1": self.c1,
            "K1": self.K1,
            "K2": self.K2,
            "K3": self.K3,
            "decayExponent": self.decayExponent,
            "kelvinDeviation": self.kelvinDeviation,
            "Rmax": self.Rmax,
            "resolution": [len(g.r) - 1, len(g.theta) - 1],
        }


def kelvin_nodes(inner: np.ndarray, Rmax: float) -> np.ndarray:
    """Radial nodes on ``[0, Rmax]``: ``inner`` on ``[0, 1]`` and their Kelvin
    images ``1/r`` beyond, so both sides are resolved alike."""
    r = np.asarray(inner, dtype=float)
    outer = 1.0 / r[(r > 1.0 / Rmax) & (r < 1.0)][::-1]
    return np.concatenate([r[r <= 1.0], outer[outer < Rmax], [Rmax]])


# ---------------------------------------------------------------------------
# Solve
# ---------------------------------------------------------------------------


def entire_initial_guess(grid: Grid2D, scale: float = 1.0, shape: str = "dipole") -> GridFunction:
    """Starting profiles: ``"dipole"`` is ``z (scale^2 + |y|^2)^(-N/2)``; ``"bump"``
    is a peak off the origin along the axis; ``"flat"`` is ``z`` tapered by ``cos``."""
    rho, z = grid.physical_coordinates()
    N = grid.N
    r2 = rho**2 + z**2
    if shape == "dipole":
        v = z * (scale**2 + r2) ** (-N / 2)
    elif shape == "bump":
        v = z * np.exp(-((np.sqrt(r2) - 0.5 * scale) ** 2) / (0.1 * scale**2))
    elif shape == "flat":
        v = z * np.cos(0.5 * math.pi * np.sqrt(r2) / grid.domain.Rmax) ** 2
    else:
        raise ParameterError(f"unknown initial shape {shape!r}")
    return GridFunction(grid, v).masked()


def _entire_grid(N: int, n_r: int, n_theta: int, gamma: float) -> Grid2D:
    return build_grid(AxisymmetricDomain.kelvin_half_ball(N, 1.0), n_r, n_theta, gamma=gamma)


def _reduced_spec(spec: ProblemSpec, grid: Grid2D) -> ProblemSpec:
    if any(p.z != 0.0 for p in spec.poles):
        raise ParameterError("entire solutions need every pole at the origin")
    if spec.epsilon != 0.0:
        raise ParameterError("entire solutions use the critical exponents (epsilon = 0)")
    return spec.with_domain(grid.domain)


def solve_entire(
    spec: ProblemSpec,
    opts: SolverOptions | None = None,
    *,
    n_r: int = 160,
    n_theta: int = 96,
    gamma: float = 1.5,
    Rmax: float = 50.0,
    init: GridFunction | None = None,
    constants: bool = True,
    verify: bool = True,
) -> EntireSolution:
    """Least-energy entire solution of ``spec`` (critical exponents, poles at 0).

    The solve is repeated on a grid with half the nodes; a solution whose
    maximum grows by more than 10% under that refinement is concentrating at
    the grid scale and raises :class:`RegimeError`, as do unconverged solves.

    The profile is Kelvin symmetric by construction, so with ``verify`` the
    reported ``kelvinDeviation`` comes from :func:`truncated_check`: an
    unconstrained Dirichlet solve on the truncated half-space started from
    the profile.

    Raises
    ------
    RegimeError
        If the discrete solutions blow up or fail to converge (parameters
        outside the existence regime).
    """
    opts = opts or SolverOptions()
    grid = _entire_grid(spec.N, n_r, n_theta, gamma)
    rspec = _reduced_spec(spec, grid)
    coarse = _entire_grid(spec.N, max(n_r // 2, 8), max(n_theta // 2, 8), gamma)
    try:
        uc, rc = minimize(rspec, entire_initial_guess(coarse), opts)
        start = init if init is not None else uc.resample(grid, outside="decay").masked()
        u, rep = minimize(rspec, start, opts)
    except Exception as exc:  # solver diagnostics become a regime verdict
        raise RegimeError(f"half-space solve failed: {exc}") from exc
    if not (rep.converged and rc.converged):
        raise RegimeError("half-space solve did not converge")
    if rep.m > 1.1 * rc.m:
        raise RegimeError(
            f"maximum grows under refinement ({rc.m:.4g} -> {rep.m:.4g}): concentration at the grid scale"
        )
    sol = EntireSolution(u, spec, 2.0 * rep.c_level, Rmax=Rmax, report=rep)
    if constants:
        sol.K1, sol.K2, sol.K3 = curvature_constants(sol)
        sol.decayExponent = decay_fit(sol).exponent
    if verify:
        sol.kelvinDeviation = truncated_check(sol, opts=opts)[1]
    return sol


# ---------------------------------------------------------------------------
# Curvature constants
# ---------------------------------------------------------------------------


def _normal_derivative(u: GridFunction) -> np.ndarray:
    """``d_z v`` on the flat face from a one-sided second-order stencil in ``theta``."""
    g = u.grid
    t0, t1, t2 = g.theta[:3]
    h1, h2 = t1 - t0, t2 - t0
    # derivative at t0 of the quadratic through (t0, 0), (t1, v1), (t2, v2)
    w1 = h2 / (h1 * (h2 - h1))
    w2 = -h1 / (h2 * (h2 - h1))
    Ut = w1 * u.values[:, 1] + w2 * u.values[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(g.r > 0, Ut / g.r, 0.0)


def _face_integral(r: np.ndarray, f: np.ndarray, N: int, upto: float = 1.0) -> float:
    """``int_{|y'| < upto} f dy'`` in ``R^{N-1}`` for radial ``f`` sampled at ``r``."""
    area = sphere_area(N - 2)
    xg, wg = np.polynomial.legendre.leggauss(4)
    total = 0.0
    for a, b, fa, fb in zip(r[:-1], r[1:], f[:-1], f[1:]):
        if a >= upto:
            break
        b_eff = min(b, upto)
        x = 0.5 * (a + b_eff) + 0.5 * (b_eff - a) * xg
        fx = fa + (fb - fa) * (x - a) / (b - a)
        total += 0.5 * (b_eff - a) * float(np.sum(wg * fx * x ** (N - 2)))
    return area * total


def curvature_constants(sol: EntireSolution, Rmax: float | None = None) -> tuple[float, float, float]:
    """``(K1, K2, K3)`` of the profile over the whole half-space.

    ``K1 = int |d_N v(y', 0)|^2 |y'|^2 dy'`` and, for each pole,
    ``K = (2 c s / 2*(s)) int v^{2*(s)} |y'|^2 y_N / |y|^{2+s} dy``.  The part
    beyond the ball is its Kelvin image inside, which adds the weight
    ``|y'|^{-2}``-free term for ``K1`` and ``|y|^{-2}`` for the volume
    integrals.

    Raises
    ------
    RmaxTooSmallError
        If more than 10% of any constant comes from ``|y| > Rmax``.
    """
    R = sol.Rmax if Rmax is None else Rmax
    u = sol.profile
    g = u.grid
    N = g.N
    gn = _normal_derivative(u)
    g2 = gn**2
    r = g.r
    # |y'| < 1 carries |y'|^2, its Kelvin image carries weight 1
    K1 = _face_integral(r, g2 * r**2, N) + _face_integral(r, g2, N)
    K1_tail = _face_integral(r, g2, N, upto=1.0 / R)
    ks, tails = [], []
    rho, z = g.gauss_points
    y2 = rho**2 + z**2
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(y2 > 0, rho**2 * z / y2, 0.0)
        mirror = np.where(y2 > 0, 1.0 + 1.0 / y2, 0.0)
    ug = np.maximum(g.interp @ np.maximum(u.flat, 0.0), 0.0)
    for p in sol.spec.poles:
        crit = critical_exponent(N, p.s)
        coef = 2.0 * p.coeff * p.s / crit
        w = g.pole_weight(p.s) * ug**crit * f
        ks.append(coef * float(np.sum(w * mirror)))
        tails.append(coef * float(np.sum(np.where(y2 < R**-2, w / np.where(y2 > 0, y2, 1.0), 0.0))))
    K2, K3 = (ks + [0.0, 0.0])[:2]
    for name, total, tail in [("K1", K1, K1_tail)] + list(zip(("K2", "K3"), ks, tails)):
        if total != 0.0 and abs(tail) > 0.1 * abs(total):
            raise RmaxTooSmallError(f"{name}: {abs(tail / total):.1%} of the integral lies beyond Rmax={R}")
    return float(K1), float(K2), float(K3)


# ---------------------------------------------------------------------------
# Symmetry and decay diagnostics
# ---------------------------------------------------------------------------


def _evaluator(obj) -> tuple[Callable, int, float]:
    if isinstance(obj, EntireSolution):
        return obj.evaluate, obj.N, math.inf
    if isinstance(obj, GridFunction):
        R = obj.grid.r[-1]
        if obj.grid.domain.kelvin:
            return (lambda rho, z: obj.evaluate(rho, z, outside="decay")), obj.grid.N, math.inf
        return (lambda rho, z: obj.evaluate(rho, z, outside="zero")), obj.grid.N, R
    raise ParameterError("expected an EntireSolution or a GridFunction")


def kelvin_symmetry_check(obj, annulus: tuple[float, float] = (0.5, 2.0), n: int = 48) -> float:
    """Smallest relative deviation ``min_sigma ||w_sigma - K w_sigma||_inf / ||w_sigma||_inf``.

    ``w_sigma(y) = sigma^{(N-2)/2} v(sigma y)`` and ``K`` is the Kelvin
    reflection in the unit sphere; the norms run over the half annulus
    ``annulus[0] <= |y| <= annulus[1]``.  The result does not depend on the
    scale of the input profile.
    """
    ev, N, Rlim = _evaluator(obj)
    a, b = annulus
    rr = np.geomspace(a, b, n)
    th = np.linspace(0.0, 0.5 * math.pi, n)[1:]
    Rg, Tg = np.meshgrid(rr, th, indexing="ij")
    rho, z = Rg * np.cos(Tg), Rg * np.sin(Tg)
    kr = 1.0 / Rg**2

    def dev(log_sigma: float) -> float:
        s = math.exp(log_sigma)
        w = ev(s * rho, s * z)
        kw = Rg ** (2 - N) * ev(s * rho * kr, s * z * kr)
        scale = np.max(np.abs(w))
        return float(np.max(np.abs(w - kw)) / scale) if scale > 0 else math.inf

    # dilation range where the annulus stays inside the sampled region
    hi = math.log(Rlim / b) if math.isfinite(Rlim) else math.log(1e3)
    lo = -hi if math.isfinite(Rlim) else math.log(1e-3)
    grid_s = np.linspace(lo, hi, 41)
    vals = [dev(x) for x in grid_s]
    i = int(np.argmin(vals))
    a_, b_ = grid_s[max(i - 1, 0)], grid_s[min(i + 1, len(grid_s) - 1)]
    res = minimize_scalar(dev, bounds=(a_, b_), method="bounded", options={"xatol": 1e-6})
    return float(min(res.fun, vals[i]))


def decay_fit(obj, Rmax: float | None = None, shell: tuple[float, float] = (0.8, 1.0),
              n_rays: int = 8, max_residual: float = 0.05) -> DecayFit:
    """Fit ``log v = log C(theta) + exponent log |y|`` on the outer shell.

    One exponent is shared by all rays; ``C`` is the largest ray amplitude.
    """
    ev, N, Rlim = _evaluator(obj)
    if Rmax is None:
        Rmax = obj.Rmax if isinstance(obj, EntireSolution) else Rlim
    if not math.isfinite(Rmax):
        raise ParameterError("Rmax needed for a Kelvin-extended field")
    rr = np.geomspace(shell[0] * Rmax, shell[1] * Rmax, 24)
    if shell[1] * Rmax >= Rlim:
        rr = rr[rr < Rlim * (1 - 1e-9)]
    th = np.linspace(0.0, 0.5 * math.pi, n_rays + 2)[1:-1]
    rows, ys, ray = [], [], []
    for k, t in enumerate(th):
        v = ev(rr * math.cos(t), rr * math.sin(t))
        ok = v > 0
        rows.append(np.log(rr[ok]))
        ys.append(np.log(v[ok]))
        ray.append(np.full(ok.sum(), k))
    x = np.concatenate(rows)
    y = np.concatenate(ys)
    k = np.concatenate(ray)
    if len(x) < 2 * n_rays:
        return DecayFit(float("nan"), float("nan"), float("inf"), False)
    X = np.zeros((len(x), n_rays + 1))
    X[:, 0] = x
    X[np.arange(len(x)), 1 + k] = 1.0
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = float(np.sqrt(np.mean((X @ coef - y) ** 2)))
    exponent = float(coef[0])
    C = float(np.exp(np.max(coef[1:])))
    accepted = exponent <= -(N - 1) + 0.3 and resid <= max_residual
    return DecayFit(C, exponent, resid, bool(accepted))


def tail_bound(C: float, Rmax: float, N: int) -> float:
    """Bound ``C^2 Rmax^{2-N} |S^{N-1}|/2`` on the energy beyond ``Rmax`` of a
    field with ``|v| <= C |y|^{1-N}`` (and the matching gradient decay)."""
    return C * C * Rmax ** (2 - N) * 0.5 * sphere_area(N - 1)


def truncated_level(sol: EntireSolution, Rmax: float) -> float:
    """``Phi`` of the profile restricted to ``|y| < Rmax``.

    The part beyond ``Rmax`` is the Kelvin image of the ball of radius
    ``1/Rmax``: the power integrals are invariant and
    ``int_{|y|>R} |grad v|^2 = int_{|y|<1/R} |grad v|^2 + (N-2) R int_{|y|=1/R} v^2``.
    """
    g = sol.profile.grid
    small = build_grid(AxisymmetricDomain.kelvin_half_ball(sol.N, 1.0 / Rmax), len(g.r) - 1,
                       len(g.theta) - 1, r_nodes=g.r / Rmax, theta_nodes=g.theta)
    rho, z = small.physical_coordinates()
    w = sol.profile.evaluate(rho, z, outside="decay").ravel()
    spec = sol.spec.with_domain(small.domain)
    F = Functional(spec, small)
    A_k, B = F.terms(w)
    # kelvin stiffness already carries (N-2) R/2 of the sphere term
    arc = float(w @ (small.arc_mass @ w))
    tail_A = A_k + 0.5 * (sol.N - 2) * Rmax * arc
    tail = 0.5 * tail_A - float(np.sum(F.coeffs * B / (F.q + 1)))
    return sol.c1 - tail


def truncated_check(sol: EntireSolution, Rmax: float = 20.0, n_theta: int = 48, stride: int = 2,
                    opts: SolverOptions | None = None) -> tuple[float, float]:
    """Re-solve on the truncated half-space without the Kelvin constraint.

    Starts from the profile on a grid of radius ``Rmax`` whose radial nodes
    are every ``stride``-th profile node and their Kelvin images.  Returns
    ``(c1_truncated, kelvin_deviation)`` of the converged Dirichlet solution.

    Raises
    ------
    RegimeError
        If the truncated solve does not converge.
    """
    grid = build_grid(AxisymmetricDomain.half_space(sol.N, Rmax), 8, n_theta,
                      r_nodes=kelvin_nodes(sol.profile.grid.r[::stride], Rmax))
    rho, z = grid.physical_coordinates()
    start = GridFunction(grid, sol.evaluate(rho, z)).masked()
    u, rep = minimize(sol.spec.with_domain(grid.domain), start, opts or SolverOptions())
    if not rep.converged:
        raise RegimeError("truncated half-space solve did not converge")
    return rep.c_level, kelvin_symmetry_check(u)


# ---------------------------------------------------------------------------
# Least-energy and norm checks
# ---------------------------------------------------------------------------


def norm_floor(spec: ProblemSpec) -> float:
    """Lower bound on ``int |grad v|^2`` for any entire solution (Hardy-Sobolev chain)."""
    return level_floor(spec, None)[0]


def least_energy_check(
    spec: ProblemSpec,
    inits: Sequence[tuple[float, str]] = ((1.0, "dipole"), (0.3, "dipole"), (3.0, "dipole"),
                                          (1.0, "bump"), (1.0, "flat")),
    opts: SolverOptions | None = None,
    n_r: int = 96,
    n_theta: int = 64,
    gamma: float = 1.5,
) -> list[dict]:
    """Solve from several starting profiles; one record per start.

    Each record has ``scale, shape, c1, converged, m``.  The least-energy
    level is the smallest converged ``c1``.
    """
    opts = opts or SolverOptions()
    grid = _entire_grid(spec.N, n_r, n_theta, gamma)
    rspec = _reduced_spec(spec, grid)
    out = []
    for scale, shape in inits:
        try:
            _, rep = minimize(rspec, entire_initial_guess(grid, scale, shape), opts)
            out.append({"scale": scale, "shape": shape, "c1": 2.0 * rep.c_level,
                        "converged": rep.converged, "m": rep.m})
        except Exception as exc:  # record, never drop
            out.append({"scale": scale, "shape": shape, "c1": float("nan"), "converged": False,
                        "m": float("nan"), "error": str(exc)})
    return out


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def export_entire(sol: EntireSolution, directory) -> tuple[Path, Path]:
    """Write ``entire_profile.txt`` (grid text format) and ``entire_summary.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    prof = d / "entire_profile.txt"
    save_grid_function(sol.profile, prof)
    summ = d / "entire_summary.json"
    summ.write_text(json.dumps(sol.summary(), indent=2, sort_keys=True) + "\n")
    return prof, summ
