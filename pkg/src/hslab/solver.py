"""Least-energy solver, subcritical continuation and blow-up diagnostics.

The least-energy level is ``inf_u max_t Phi(t u)``.  The solver descends
the ray-reduced energy ``E(u) = Phi(t*(u) u)`` with an ``H^1_0``
(stiffness-preconditioned) gradient, projecting onto ``u >= 0`` and back
onto the Nehari set after every step.  Once the gradient is small a Newton
polish drives the residual to round-off.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.linalg import splu

from .errors import (
    DiagnosticsError,
    InvariantViolation,
    NehariError,
    ParameterError,
    ScaleError,
)
from .functional import EnergyBreakdown, Functional, ray_maximizer
from .grid import Grid2D, GridFunction
from .model import ProblemSpec, critical_exponent
from . import oracle

log = logging.getLogger(__name__)

__all__ = [
    "SolverOptions",
    "SolveReport",
    "ContinuationTrace",
    "default_initial_guess",
    "minimize",
    "continuation",
    "predict_next",
    "RescaledProfile",
    "blowup_rescale",
    "classify",
    "limiting_level",
    "level_floor",
    "FocusRegrid",
    "profile_distance",
]


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and switches for :func:`minimize` and :func:`continuation`.

    ``tol`` bounds both the relative ``H^-1`` gradient norm and the relative
    Nehari residual at convergence.  ``blowup_factor`` is the growth of the
    maximum (over its value at the first continuation step) treated as
    blow-up; ``level_rtol`` is the relative change of the level accepted as
    converged in a compact continuation.  ``predict`` warm-starts each
    continuation step from the previous solution translated and rescaled to
    the extrapolated peak location, height and width.
    """

    tol: float = 1e-8
    max_iter: int = 3000
    newton: bool = True
    newton_switch: float = 1e-1
    max_newton: int = 100
    armijo: float = 1e-4
    tau0: float = 1.0
    monotone_rtol: float = 1e-12
    blowup_factor: float = 50.0
    level_rtol: float = 0.02
    regrid: object | None = None
    max_regrid: int = 3
    predict: bool = True


@dataclass
class SolveReport:
    """Outcome of one least-energy solve."""

    epsilon: float
    c_level: float
    iterations: int
    newtonSteps: int
    gradNorm: float
    nehariRel: float
    m: float
    argmax: tuple[float, float]
    k: float
    converged: bool
    energyBreakdown: EnergyBreakdown
    energies: list = field(default_factory=list, repr=False)

    @property
    def absx(self) -> float:
        return float(math.hypot(*self.argmax))

    @property
    def ratio(self) -> float:
        """``|x_eps| / k_eps``."""
        return self.absx / self.k if self.k > 0 else float("inf")


@dataclass
class ContinuationTrace:
    schedule: list[float]
    reports: list[SolveReport]
    verdict: str
    solutions: list[GridFunction] = field(default_factory=list, repr=False)

    CSV_COLUMNS = ("epsilon", "c_level", "m", "absx", "k", "absx_over_k", "gradNorm", "verdict")

    def rows(self) -> list[dict]:
        return [
            {
                "epsilon": r.epsilon,
                "c_level": r.c_level,
                "m": r.m,
                "absx": r.absx,
                "k": r.k,
                "absx_over_k": r.ratio,
                "gradNorm": r.gradNorm,
                "verdict": self.verdict,
            }
            for r in self.reports
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for row in self.rows():
            w.writerow([row[c] if isinstance(row[c], str) else repr(float(row[c])) for c in self.CSV_COLUMNS])
        return buf.getvalue()


def default_initial_guess(grid: Grid2D) -> GridFunction:
    """Bubble at depth ``Rmax/4`` on the axis, tapered to vanish on the boundary."""
    R = grid.domain.Rmax
    rho, z = grid.physical_coordinates()
    Rr, T = grid._mesh
    mu = 8.0 / R
    b = oracle.bubble_profile(np.hypot(rho, z - R / 4), grid.N, mu)
    v = b * np.sin(T) * (1 - (Rr / R) ** 2)
    return GridFunction(grid, v).masked()


# ---------------------------------------------------------------------------
# Core descent
# ---------------------------------------------------------------------------


class _Problem:
    def __init__(self, spec: ProblemSpec, grid: Grid2D):
        self.F = Functional(spec, grid)
        self.grid = grid
        self.free = grid.free
        self.Kff = grid.stiffness_free
        self._lu = None

    @property
    def lu(self):
        if self._lu is None:
            self._lu = splu(self.Kff)
        return self._lu

    def project(self, v: np.ndarray) -> tuple[np.ndarray, float]:
        """Positive part then Nehari rescale; returns the state and ``E``."""
        v = np.maximum(v, 0.0)
        v[self.grid.dirichlet_mask.ravel()] = 0.0
        A, B = self.F.terms(v)
        t = ray_maximizer(A, self.F.coeffs, B, self.F.q)
        v = t * v
        return v, self.F.phi_from_terms(A, B, t)

    def stats(self, v: np.ndarray):
        g = self.F.grad(v)[self.free]
        d = self.lu.solve(g)
        A = float(v @ (self.F.K @ v))
        gn = math.sqrt(max(float(g @ d), 0.0) / A) if A > 0 else float("inf")
        return g, d, gn


def _nehari_rel(F: Functional, v: np.ndarray) -> float:
    A, B = F.terms(v)
    return abs(A - float(F.coeffs @ B)) / max(A, 1e-300)


def minimize(spec: ProblemSpec, init: GridFunction, opts: SolverOptions | None = None,
             _problem: _Problem | None = None) -> tuple[GridFunction, SolveReport]:
    """Least-energy critical point of ``Phi_eps`` starting from ``init``.

    Raises
    ------
    DiagnosticsError
        If the ray energy becomes nonpositive or the ray loses its maximum.
    InvariantViolation
        If an accepted step increases the energy.
    """
    opts = opts or SolverOptions()
    grid = init.grid
    if spec.domain is not None and spec.domain != grid.domain:
        raise ParameterError("spec domain differs from the grid domain")
    if not np.any(init.values > 0):
        raise ParameterError("initial guess must be nonnegative and nonzero")
    prob = _problem or _Problem(spec, grid)
    F = prob.F
    free = prob.free
    try:
        v, E = prob.project(init.flat.copy())
    except NehariError as exc:
        raise DiagnosticsError(f"initial guess has no ray maximum: {exc}") from exc
    energies = [E]
    it = 0
    newton_steps = 0
    g, d, gn = prob.stats(v)
    tau = opts.tau0
    converged = False
    newton_wait = 0
    shift = 0.0
    p_prev = None
    g_prev = d_prev = None
    while it < opts.max_iter:
        neh = _nehari_rel(F, v)
        if gn <= opts.tol and neh <= opts.tol:
            converged = True
            break
        newton_wait -= 1
        if opts.newton and gn < opts.newton_switch and newton_wait <= 0 and newton_steps < opts.max_newton:
            newton_steps += 1
            ok, v_new, E_new, g2, d2, gn2, shift = _newton_step(prob, v, g, E, gn, opts, shift)
            log.debug("newton %s gn %.3e -> %.3e E %.15g shift %.1e", ok, gn, gn2, E_new, shift)
            if ok:
                it += 1
                v, E, g, d, gn = v_new, E_new, g2, d2, gn2
                energies.append(E)
                p_prev = None
                continue
            # let a few descent steps run before retrying
            newton_wait = 5
        # preconditioned Polak-Ribiere direction, reset when not a descent direction
        p = d
        if p_prev is not None:
            beta = max(0.0, float(g @ (d - d_prev)) / float(g_prev @ d_prev))
            p = d + beta * p_prev
            if float(g @ p) <= 0:
                p = d
        slope = float(g @ p)
        accepted = False
        tau_try = min(tau * 2.0, 1e3)
        for _ in range(60):
            cand = v.copy()
            cand[free] -= tau_try * p
            try:
                v_new, E_new = prob.project(cand)
            except NehariError:
                tau_try *= 0.5
                continue
            if E_new <= E - opts.armijo * tau_try * slope:
                accepted = True
                break
            tau_try *= 0.5
        it += 1
        if not accepted:
            if p is not d:
                p_prev = None
                continue
            # no descent possible at working precision
            break
        if E_new <= 0:
            raise DiagnosticsError("ray energy became nonpositive")
        if E_new > E * (1 + opts.monotone_rtol):
            raise InvariantViolation("accepted step increased the energy")
        tau = tau_try
        log.debug("descent tau %.3e E %.15g -> %.15g", tau, E, E_new)
        v, E = v_new, E_new
        energies.append(E)
        g_prev, d_prev, p_prev = g, d, p
        g, d, gn = prob.stats(v)
    neh = _nehari_rel(F, v)
    converged = converged or (gn <= opts.tol and neh <= opts.tol)
    u = GridFunction(grid, v)
    return u, _report(spec, u, F, it, newton_steps, gn, neh, converged, energies)


def _newton_step(prob: _Problem, v: np.ndarray, g: np.ndarray, E: float, gn: float,
                 opts: SolverOptions, shift: float = 0.0):
    """Levenberg-Marquardt Newton step, then the Nehari projection.

    Solves ``(J + shift K) delta = -g`` for increasing shifts until the
    projected state lowers the gradient norm or the energy.  The shift in the
    stiffness metric caps motion along nearly flat modes (a concentrated peak
    sliding through the domain) that make plain Newton steps useless.
    Returns ``(ok, v, E, g, d, gn, shift)`` with the shift to try next.
    """
    F = prob.F
    free = prob.free
    J = (F.K - F.power_hessian(v))[free][:, free].tocsc()
    shifts = [shift] + [max(shift, 1e-6) * 4.0**j for j in range(1, 9)]
    for mu in shifts:
        try:
            delta = splu((J + mu * prob.Kff).tocsc()).solve(-g)
        except RuntimeError:
            continue
        if not np.all(np.isfinite(delta)):
            continue
        cand = v.copy()
        cand[free] += delta
        try:
            v_new, E_new = prob.project(cand)
        except NehariError:
            continue
        g2, d2, gn2 = prob.stats(v_new)
        lower = E_new < E - opts.monotone_rtol * abs(E)
        if gn2 < gn and E_new <= E * (1 + opts.monotone_rtol) or lower and gn2 < 10.0 * gn:
            nxt = 0.0 if mu < 1e-6 else 0.25 * mu
            return True, v_new, E_new, g2, d2, gn2, nxt
    return False, v, E, None, None, gn, 0.0


def _report(spec, u, F, it, newton_steps, gn, neh, converged, energies) -> SolveReport:
    bd = F.breakdown(u.flat)
    m = u.max()
    x = u.argmax()
    k = _scale(spec, m)
    return SolveReport(spec.epsilon, bd.phi, it, newton_steps, gn, neh, m, x, k, converged, bd, energies)


def _scale(spec: ProblemSpec, m: float) -> float:
    if not m > 0:
        return float("nan")
    try:
        return spec.blowup_scale(m)
    except ParameterError:
        return float("nan")


# ---------------------------------------------------------------------------
# Continuation
# ---------------------------------------------------------------------------


def classify(reports: Sequence[SolveReport], factor: float = 50.0, level_rtol: float = 0.02) -> str:
    """Verdict from a sequence of solves ordered by decreasing ``eps``.

    ``BlowUp``: the maximum rises over the last three steps and ends
    above ``factor`` times its first value.  ``Compact``: the maximum stays
    below that threshold and the last relative changes of both the level and
    the maximum are at most ``level_rtol``.  Anything else, any unconverged step, or fewer than
    three steps gives ``Inconclusive``.
    """
    if len(reports) < 3 or not all(r.converged for r in reports):
        return "Inconclusive"
    m = np.array([r.m for r in reports])
    c = np.array([r.c_level for r in reports])
    rising = bool(np.all(np.diff(m[-3:]) > 0))
    if rising and m[-1] > factor * m[0]:
        return "BlowUp"
    settled = abs(c[-1] - c[-2]) <= level_rtol * abs(c[-1]) and abs(m[-1] - m[-2]) <= level_rtol * m[-1]
    if m.max() <= factor * m[0] and settled:
        return "Compact"
    return "Inconclusive"


def limiting_level(reports: Sequence[SolveReport], n: int = 3) -> float:
    """Level extrapolated to ``eps = 0`` by a line through the last ``n`` solves."""
    if len(reports) < 2:
        raise ParameterError("need at least two solves")
    last = reports[-n:]
    e = np.array([r.epsilon for r in last])
    c = np.array([r.c_level for r in last])
    slope, intercept = np.polyfit(e, c, 1)
    return float(intercept)


def continuation(spec: ProblemSpec, schedule: Sequence[float], opts: SolverOptions | None = None,
                 init: GridFunction | None = None, grid: Grid2D | None = None) -> ContinuationTrace:
    """Warm-started solves along a strictly decreasing ``eps`` schedule.

    ``opts.regrid``, when set, is called as ``regrid(u, report)`` after each
    solve.  When it returns a new grid the solution is interpolated onto it
    and the same ``eps`` is solved again (at most ``opts.max_regrid`` times),
    so each report comes from a grid adapted to its own solution.
    """
    opts = opts or SolverOptions()
    sched = [float(e) for e in schedule]
    if any(b >= a for a, b in zip(sched, sched[1:])):
        raise ParameterError("schedule must be strictly decreasing")
    if not sched or sched[-1] <= 0:
        raise ParameterError("schedule floor must be positive")
    if init is None:
        if grid is None:
            raise ParameterError("need an initial guess or a grid")
        init = default_initial_guess(grid)
    u = init
    reports: list[SolveReport] = []
    sols: list[GridFunction] = []
    for eps in sched:
        rep = None
        if opts.predict and len(reports) >= 2:
            u = predict_next(u, reports[-2], reports[-1], eps, opts.regrid)
        for _ in range(1 + opts.max_regrid):
            spec_e = spec.with_epsilon(eps).with_domain(u.grid.domain)
            try:
                u, rep = minimize(spec_e, u, opts)
            except (DiagnosticsError, NehariError) as exc:
                log.info("eps %.6g failed: %s", eps, exc)
                rep = _failed_report(spec_e, u)
                break
            log.info("eps %.6g grid %s: c %.10g m %.6g it %d newton %d gn %.3e", eps, u.grid.shape,
                     rep.c_level, rep.m, rep.iterations, rep.newtonSteps, rep.gradNorm)
            if not rep.converged or opts.regrid is None:
                break
            new_grid = opts.regrid(u, rep)
            if new_grid is None:
                break
            # re-solve the same eps on a grid adapted to this solution
            u = u.resample(new_grid).masked()
        reports.append(rep)
        sols.append(u)
        if not rep.converged:
            break
    verdict = classify(reports, opts.blowup_factor, opts.level_rtol)
    if len(reports) < len(sched):
        verdict = "Inconclusive"
    return ContinuationTrace(sched[: len(reports)], reports, verdict, sols)


def predict_next(u: GridFunction, prev: SolveReport, last: SolveReport, eps: float,
                 regrid: object | None = None) -> GridFunction:
    """Warm start for ``eps`` from the solution ``u`` at ``last.epsilon``.

    Peak location, log height and log scale are extrapolated linearly in
    ``log eps``; ``u`` is then moved and stretched about its peak to match.
    With a :class:`FocusRegrid` the prediction lives on a grid focused at the
    predicted peak.
    """
    xa, xb, xc = (math.log(e) for e in (prev.epsilon, last.epsilon, eps))
    if not (np.isfinite(prev.k) and np.isfinite(last.k)) or xa == xb:
        return u
    t = (xc - xb) / (xb - xa)
    (ra, za), (rb, zb) = prev.argmax, last.argmax
    sigma = (last.k / prev.k) ** t
    k_next = last.k * sigma
    domain = u.grid.domain
    R = domain.Rmax
    # keep the predicted peak inside the chart and off the boundary
    rc = min(max(rb + t * (rb - ra), 0.0), R)
    zc = zb + t * (zb - za)
    zc = min(max(zc, domain.alpha * rc**2 + 2.0 * k_next), R - 2.0 * k_next)
    if math.hypot(rc, zc - domain.alpha * rc**2) > R - 2.0 * k_next:
        return u
    grid = u.grid
    if isinstance(regrid, FocusRegrid) and regrid.focus is not None:
        grid = regrid.build(domain, rc, zc, regrid.focus[2] * sigma)
    rho, z = grid.physical_coordinates()
    # source point: same offset from the old peak, stretched by 1/sigma
    vals = u.evaluate(rb + (rho - rc) / sigma, zb + (z - zc) / sigma, outside="zero")
    return GridFunction(grid, vals).positive_part().masked()


class FocusRegrid:
    """Grid adapted to a concentrating solution.

    Nodes cluster around the maximum point with width ``width_factor * k``
    (``k`` the concentration length); a new grid is proposed when the maximum
    has left the refined zone or the scale has shrunk by ``rescale``.
    """

    def __init__(self, n_r: int = 160, n_theta: int = 120, width_factor: float = 3.0,
                 ratio: float = 400.0, rescale: float = 1.3, min_width: float = 0.0,
                 tail: float = 0.0, flatness: int = 2):
        self.n_r = n_r
        self.n_theta = n_theta
        self.width_factor = width_factor
        self.ratio = ratio
        self.rescale = rescale
        self.min_width = min_width
        self.tail = tail
        self.flatness = flatness
        self.focus: tuple[float, float, float] | None = None

    def width(self, u: GridFunction, report: SolveReport) -> float:
        # half-maximum radius along the axis is a scale-free width measure
        return max(self.width_factor * _half_width(u), self.min_width)

    def build(self, domain, rho: float, z: float, w: float) -> Grid2D:
        from .grid import build_grid, focused_nodes

        zeta = z - domain.alpha * rho**2
        rf = math.hypot(rho, zeta)
        tf = math.atan2(zeta, rho)
        R = domain.Rmax
        r = focused_nodes(0.0, R, self.n_r, rf, w, self.ratio, self.tail, self.flatness)
        th = focused_nodes(0.0, math.pi / 2, self.n_theta, tf, w / max(rf, w), self.ratio, self.tail,
                           self.flatness)
        self.focus = (rho, z, w)
        return build_grid(domain, self.n_r, self.n_theta, r_nodes=r, theta_nodes=th)

    def __call__(self, u: GridFunction, report: SolveReport) -> Grid2D | None:
        rho, z = report.argmax
        w = self.width(u, report)
        if self.focus is not None:
            fr, fz, fw = self.focus
            moved = math.hypot(rho - fr, z - fz) > 0.25 * fw
            shrunk = w < fw / self.rescale
            if not (moved or shrunk):
                return None
        return self.build(u.grid.domain, rho, z, w)


def _half_width(u: GridFunction) -> float:
    """Distance from the maximum to where ``u`` first drops below half of it."""
    rho0, z0 = u.argmax()
    m = u.max()
    R = u.grid.domain.Rmax
    best = R
    for direction in ((0.0, 1.0), (0.0, -1.0), (1.0, 0.0)):
        t = np.geomspace(1e-7 * R, R, 400)
        vals = u.evaluate(rho0 + direction[0] * t, z0 + direction[1] * t, outside="zero")
        below = np.flatnonzero(vals < 0.5 * m)
        if below.size:
            best = min(best, float(t[below[0]]))
    return best


def _failed_report(spec, u) -> SolveReport:
    nan = float("nan")
    bd = EnergyBreakdown(nan, (nan,), (), (), nan, nan)
    return SolveReport(spec.epsilon, nan, 0, 0, nan, nan, u.max(), u.argmax(), nan, False, bd)


# ---------------------------------------------------------------------------
# Blow-up rescaling
# ---------------------------------------------------------------------------


@dataclass
class RescaledProfile:
    """``v(y) = u(x_eps + k y)/m`` stored on the grid scaled by ``1/k``.

    ``field`` lives in coordinates ``x/k``; ``center`` is ``x_eps/k``.
    """

    field: GridFunction
    center: tuple[float, float]
    m: float
    k: float

    def evaluate(self, y_rho, y_z, outside: str = "nan") -> np.ndarray:
        """Profile at offsets ``y`` (axisymmetric components) from the maximum."""
        y_rho = np.asarray(y_rho, dtype=float)
        y_z = np.asarray(y_z, dtype=float)
        return self.field.evaluate(self.center[0] + y_rho, self.center[1] + y_z, outside=outside)

    def peak(self) -> float:
        return float(self.evaluate(0.0, 0.0))


def blowup_rescale(u: GridFunction, report: SolveReport, spec: ProblemSpec | None = None) -> RescaledProfile:
    """Blow-up rescaling about the maximum point at the concentration scale ``k``."""
    m, k = report.m, report.k
    if not m > 0:
        raise ParameterError("rescaling needs m > 0")
    if not (np.isfinite(k) and k > 1e-250 and np.isfinite(1.0 / k)):
        raise ScaleError(f"unusable blow-up scale k={k!r}")
    grid = u.grid.scaled(1.0 / k)
    field_ = GridFunction(grid, u.values / m)
    c = (report.argmax[0] / k, report.argmax[1] / k)
    return RescaledProfile(field_, c, m, k)


def profile_distance(a: RescaledProfile, b: RescaledProfile, radius: float = 2.0, n: int = 41) -> float:
    """Sup-norm difference of two rescaled profiles on the disc ``|y| <= radius``."""
    yr, yz = np.meshgrid(np.linspace(0, radius, n), np.linspace(-radius, radius, 2 * n - 1), indexing="ij")
    sel = np.hypot(yr, yz) <= radius
    va = a.evaluate(yr[sel], yz[sel], outside="zero")
    vb = b.evaluate(yr[sel], yz[sel], outside="zero")
    return float(np.nanmax(np.abs(va - vb)))


# ---------------------------------------------------------------------------
# Mountain-pass floor
# ---------------------------------------------------------------------------


def level_floor(spec: ProblemSpec, domain=None) -> tuple[float, float]:
    """Lower bounds ``(A0, c0)`` on the Dirichlet integral and level of any
    nontrivial critical point.

    On the Nehari set ``A <= sum_{c_i > 0} c_i B_i``; each ``B_i`` is bounded
    by the whole-space Hardy-Sobolev inequality (with Hölder on the domain
    for subcritical powers), giving ``A >= A0``.  Then
    ``Phi >= (1/2 - 1/(Q+1)) A`` with ``Q`` the smallest positive-term power,
    valid when every negative term has a power at most ``Q``.
    """
    domain = domain if domain is not None else spec.domain
    N = spec.N
    q = np.array(spec.exponents())
    M, e = [], []
    Q = min(qi for p, qi in zip(spec.poles, q) if p.coeff > 0)
    for p, qi in zip(spec.poles, q):
        if p.coeff < 0:
            if qi > Q:
                return 0.0, 0.0
            continue
        if p.coeff == 0:
            continue
        if p.s >= 2.0 or p.z != 0.0:
            return 0.0, 0.0
        S = oracle.hardy_sobolev_constant(N, p.s)
        crit = critical_exponent(N, p.s)
        Mi = S ** (-(qi + 1) / 2.0)
        if qi + 1 < crit - 1e-14:
            if domain is None:
                return 0.0, 0.0
            Rb = domain.Rmax * (1 + abs(domain.alpha) * domain.Rmax)
            from .grid import sphere_area

            V = sphere_area(N - 1) * Rb ** (N - p.s) / (N - p.s)
            Mi *= V ** (1 - (qi + 1) / crit)
        M.append(p.coeff * Mi)
        e.append((qi - 1) / 2.0)
    f = lambda logA: sum(m * math.exp(ei * logA) for m, ei in zip(M, e)) - 1.0
    lo, hi = -200.0, 200.0
    A0 = math.exp(brentq(f, lo, hi))
    return A0, (0.5 - 1.0 / (Q + 1)) * A0
