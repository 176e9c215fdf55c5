"""Test functions built from entire solutions and bubbles.

Two families are handled:

* the flattened entire profile ``u_eps(x) = eta(x) eps^{-(N-2)/2} v(phi(x)/eps)``
  on a curved cap, whose energy sits below ``c1`` by a curvature gap, and
* cut-off Sobolev bubbles ``phi(x) (mu/(1 + mu^2|x - x0|^2))^{(N-2)/2}`` for
  the perturbed problem, whose ray supremum falls below the Sobolev level.

Grids for the first family are expressed in the rescaled variable
``x / eps``; the energy is invariant under that rescaling because every
power is critical, and the same nodes can then be reused for every ``eps``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ChartError, ParameterError, SweepRangeError
from .functional import Functional, ray_energy, ray_maximizer
from .grid import (
    AxisymmetricDomain,
    BoundaryGraph,
    Grid2D,
    GridFunction,
    build_grid,
    flattening_map,
    focused_nodes,
    mean_curvature,
)
from .halfspace import EntireSolution, kelvin_nodes
from .model import Pole, ProblemSpec, critical_exponent
from .oracle import sobolev_threshold

__all__ = [
    "quintic_cutoff",
    "TestFunctionSpec",
    "test_grid",
    "build_test_function",
    "SweepResult",
    "energy_sweep",
    "default_ladder",
    "GapFit",
    "lemma41_gap",
    "ExpansionShifts",
    "expansion_shifts",
    "BubbleSpec",
    "bubble_grid",
    "bubble_test_function",
    "BubbleRecord",
    "bubble_threshold_check",
    "bubble_calibration",
    "Bookkeeping",
    "bookkeeping_check",
]


def quintic_cutoff(r, r0: float) -> np.ndarray:
    """Radial ``C^2`` cutoff: 1 on ``r <= r0/2``, 0 on ``r >= r0``, quintic smoothstep between."""
    t = np.clip((np.asarray(r, dtype=float) - 0.5 * r0) / (0.5 * r0), 0.0, 1.0)
    return 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t * t)


# ---------------------------------------------------------------------------
# Flattened entire profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestFunctionSpec:
    """Entire profile, boundary graph, concentration scale and cutoff radius.

    The cutoff acts on the flattened radius ``|phi(x)|``; the cap is the set
    ``|phi(x)| < r0`` above the graph.
    """

    __test__ = False

    entire: EntireSolution
    graph: BoundaryGraph
    epsilon: float
    r0: float

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ParameterError("epsilon must be positive")
        if not self.r0 > 0:
            raise ParameterError("r0 must be positive")
        if self.r0 > self.graph.r0:
            raise ChartError("the cutoff support leaves the flattening chart")
        if self.epsilon > self.r0 / (10.0 * self.entire.Rmax) * (1 + 1e-12):
            raise ParameterError("need epsilon <= r0 / (10 Rmax) so the profile core sits in the cutoff plateau")

    @property
    def N(self) -> int:
        return self.entire.N

    @property
    def domain(self) -> AxisymmetricDomain:
        """The physical cap."""
        return AxisymmetricDomain("CurvedCap", self.N, self.r0, self.graph)


def test_grid(tspec: TestFunctionSpec, theta_nodes: np.ndarray | None = None) -> Grid2D:
    """Grid over the cap rescaled by ``1/eps``.

    Radial nodes are the profile's nodes on ``[0, 1]`` and their Kelvin images
    out to ``r0/eps``, so every ``eps`` shares the resolved core.
    """
    dom = tspec.domain.scaled(1.0 / tspec.epsilon)
    g = tspec.entire.profile.grid
    th = g.theta if theta_nodes is None else theta_nodes
    return build_grid(dom, 8, 8, r_nodes=kelvin_nodes(g.r, dom.Rmax), theta_nodes=th)


test_grid.__test__ = False


def build_test_function(tspec: TestFunctionSpec, grid: Grid2D, scale: float | None = None) -> GridFunction:
    """``eta * eps^{-(N-2)/2} v(phi(x)/eps)`` sampled on ``grid``.

    ``grid`` covers the cap in the coordinate ``x / scale``; the field is
    returned as ``scale^{(N-2)/2} u(scale * x_grid)``, which has the same
    energy.  ``scale`` defaults to ``r0 / grid radius`` (``eps`` for
    :func:`test_grid`, 1 for a grid over the physical cap).

    Raises
    ------
    ChartError
        If a grid node leaves the flattening chart.
    """
    N = tspec.N
    L = tspec.r0 / grid.domain.Rmax if scale is None else scale
    alpha = tspec.graph.alpha
    if abs(grid.alpha - alpha * L) <= 1e-12 * max(1.0, abs(alpha * L)):
        # the grid chart is the scaled flattening chart
        rho, zeta = grid.chart_coordinates()
        if np.any(L * rho > tspec.graph.r0 * (1 + 1e-12)):
            raise ChartError("grid nodes lie outside the flattening chart")
        y = np.stack([L * rho.ravel(), L * zeta.ravel()], axis=-1)
    else:
        rho, z = grid.physical_coordinates()
        y = flattening_map(np.stack([L * rho.ravel(), L * z.ravel()], axis=-1), tspec.graph)
    eps = tspec.epsilon
    radius = np.hypot(y[:, 0], y[:, 1])
    eta = quintic_cutoff(radius, tspec.r0)
    v = tspec.entire.evaluate(y[:, 0] / eps, np.maximum(y[:, 1], 0.0) / eps)
    vals = (L / eps) ** ((N - 2) / 2.0) * eta * v
    return GridFunction(grid, vals.reshape(grid.shape)).masked()


# ---------------------------------------------------------------------------
# Ray sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepResult:
    maxPhi: float
    tAtMax: float
    A: float
    B: tuple[float, ...]


def energy_sweep(u: GridFunction, spec: ProblemSpec, t_grid: np.ndarray | None = None) -> SweepResult:
    """``max_t Phi(t u)`` from a log-spaced scan refined around the best point.

    The default scan is 400 points on ``[0.2, 5]``.

    Raises
    ------
    SweepRangeError
        If the scanned maximum sits at either end of ``t_grid``.
    """
    t_grid = np.geomspace(0.2, 5.0, 400) if t_grid is None else np.asarray(t_grid, float)
    F = Functional(spec.with_domain(u.grid.domain), u.grid)
    A, B = F.terms(u.flat)
    vals = np.array([ray_energy(t, A, F.coeffs, B, F.q) for t in t_grid])
    i = int(np.argmax(vals))
    if i == 0 or i == len(t_grid) - 1:
        raise SweepRangeError(f"maximum at the edge of the t range (t = {t_grid[i]:.4g})")
    res = minimize_scalar(lambda t: -ray_energy(t, A, F.coeffs, B, F.q),
                          bounds=(t_grid[i - 1], t_grid[i + 1]), method="bounded",
                          options={"xatol": 1e-12})
    t, val = (float(res.x), float(-res.fun)) if -res.fun >= vals[i] else (float(t_grid[i]), float(vals[i]))
    return SweepResult(val, t, A, tuple(float(b) for b in B))


# ---------------------------------------------------------------------------
# Curvature gap
# ---------------------------------------------------------------------------


def default_ladder(r0: float, Rmax: float, n: int = 4) -> list[float]:
    """``eps_k = r0 / (10 Rmax 2^k)``, ``k = 0..n-1``."""
    return [r0 / (10.0 * Rmax * 2.0**k) for k in range(n)]


@dataclass
class GapFit:
    """Fit of ``c1 - max_t Phi(t u_eps)`` against ``eps``.

    ``slope`` is the linear coefficient of a least-squares fit
    ``gap = offset + slope eps + curvature eps^2``; ``offset`` absorbs the
    ``eps``-independent discretization error of the test grid.
    ``expected`` is ``-H K1`` and ``half_expected`` is ``-H K1 / 2``.
    """

    epsilons: list[float]
    gaps: list[float]
    maxPhi: list[float]
    tAtMax: list[float]
    slope: float
    offset: float
    curvature: float
    H: float
    K1: float
    records: list[dict] = field(default_factory=list)

    @property
    def expected(self) -> float:
        return -self.H * self.K1

    @property
    def half_expected(self) -> float:
        return -0.5 * self.H * self.K1

    @property
    def counterexamples(self) -> list[dict]:
        """Ladder points with a nonpositive gap."""
        return [r for r in self.records if r["counterexample"]]

    def to_record(self) -> dict:
        return {
            "slope": self.slope,
            "offset": self.offset,
            "curvature": self.curvature,
            "H": self.H,
            "K1": self.K1,
            "expected": self.expected,
            "half_expected": self.half_expected,
            "points": self.records,
        }


def _fit_gap(eps: np.ndarray, gaps: np.ndarray) -> tuple[float, float, float]:
    cols = [np.ones_like(eps), eps] + ([eps**2] if len(eps) >= 4 else [])
    X = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(X, gaps, rcond=None)
    return float(coef[1]), float(coef[0]), float(coef[2]) if len(coef) > 2 else 0.0


def lemma41_gap(
    entire: EntireSolution,
    graph: BoundaryGraph,
    eps_list: Sequence[float] | None = None,
    r0: float | None = None,
) -> GapFit:
    """Energy gap ``c1 - max_t Phi(t u_eps)`` along a dyadic ``eps`` ladder.

    ``r0`` (cutoff radius) defaults to the chart radius of ``graph``.  Every
    ladder point is kept; nonpositive gaps are flagged as counterexamples.
    """
    r0 = graph.r0 if r0 is None else r0
    eps_list = default_ladder(r0, entire.Rmax) if eps_list is None else list(eps_list)
    if len(eps_list) < 4:
        raise ParameterError("the ladder needs at least 4 values")
    ratios = np.diff(np.log2(sorted(eps_list)))
    if not np.allclose(ratios, 1.0):
        raise ParameterError("the ladder must be dyadic")
    H = mean_curvature(graph, entire.N)
    out = []
    for eps in eps_list:
        ts = TestFunctionSpec(entire, graph, eps, r0)
        u = build_test_function(ts, test_grid(ts))
        sw = energy_sweep(u, entire.spec)
        gap = entire.c1 - sw.maxPhi
        out.append({"epsilon": eps, "maxPhi": sw.maxPhi, "tAtMax": sw.tAtMax, "gap": gap,
                    "counterexample": bool(gap <= 0.0)})
    e = np.array([r["epsilon"] for r in out])
    g = np.array([r["gap"] for r in out])
    slope, offset, curv = _fit_gap(e, g)
    return GapFit(
        epsilons=list(e), gaps=list(g), maxPhi=[r["maxPhi"] for r in out],
        tAtMax=[r["tAtMax"] for r in out], slope=slope, offset=offset, curvature=curv,
        H=H, K1=entire.K1, records=out,
    )


@dataclass(frozen=True)
class ExpansionShifts:
    """Measured and predicted first-order shifts at one ``eps``.

    Shifts are relative to the flat profile on the same nodes and divided by
    ``eps``: ``dirichlet`` of ``int |grad u|^2``, ``first``/``second`` of the
    signed pole integrals ``c_i int u^{2*(s_i)}/|x|^{s_i}``.  Predictions are
    ``H (K1 - K2 - K3)``, ``-(2*(s1)/2) K2 H`` and ``-(2*(s2)/2) K3 H``.
    """

    epsilon: float
    dirichlet: float
    first: float
    second: float
    predicted: tuple[float, float, float]

    @property
    def measured(self) -> tuple[float, float, float]:
        return (self.dirichlet, self.first, self.second)

    def relative_errors(self) -> tuple[float, ...]:
        return tuple(abs(m - p) / abs(p) if p != 0 else abs(m) for m, p in zip(self.measured, self.predicted))


def expansion_shifts(entire: EntireSolution, graph: BoundaryGraph, eps: float, r0: float | None = None) -> ExpansionShifts:
    """First-order shifts of the three integrals of ``u_eps`` against the flat profile."""
    r0 = graph.r0 if r0 is None else r0
    spec = entire.spec
    if len(spec.poles) != 2:
        raise ParameterError("expansion shifts are defined for two-pole problems")
    ts = TestFunctionSpec(entire, graph, eps, r0)
    flat = TestFunctionSpec(entire, BoundaryGraph(0.0, graph.r0), eps, r0)
    terms = []
    for t in (ts, flat):
        u = build_test_function(t, test_grid(t))
        F = Functional(spec.with_domain(u.grid.domain), u.grid)
        A, B = F.terms(u.flat)
        terms.append((A, F.coeffs * B))
    (A1, B1), (A0, B0) = terms
    H = mean_curvature(graph, entire.N)
    c1 = critical_exponent(entire.N, spec.poles[0].s)
    c2 = critical_exponent(entire.N, spec.poles[1].s)
    pred = (H * (entire.K1 - entire.K2 - entire.K3), -0.5 * c1 * entire.K2 * H, -0.5 * c2 * entire.K3 * H)
    return ExpansionShifts(eps, (A1 - A0) / eps, (B1[0] - B0[0]) / eps, (B1[1] - B0[1]) / eps, pred)


# ---------------------------------------------------------------------------
# Bubbles for the perturbed problem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BubbleSpec:
    """Bubble of scale ``mu`` at ``(0, center)`` with a cutoff of radius ``cutoff``."""

    center: float
    mu: float
    cutoff: float

    def __post_init__(self) -> None:
        if not self.center > 0:
            raise ParameterError("the bubble centre must differ from the pole")
        if not self.mu > 0:
            raise ParameterError("mu must be positive")
        if not 0 < self.cutoff < self.center:
            raise ParameterError("the cutoff support must avoid the pole and the flat boundary")

    @property
    def inconclusive(self) -> bool:
        """Bubbles wider than the unit scale are not concentrated."""
        return self.mu < 1.0


def bubble_grid(domain: AxisymmetricDomain, bspec: BubbleSpec, n_r: int = 160, n_theta: int = 96,
                ratio: float = 40.0) -> Grid2D:
    """Polar grid refined around the bubble centre at width ``1/mu``."""
    w = 1.0 / bspec.mu
    r = focused_nodes(0.0, domain.Rmax, n_r, bspec.center, w, ratio=ratio)
    th = focused_nodes(0.0, 0.5 * math.pi, n_theta, 0.5 * math.pi, w / bspec.center, ratio=ratio)
    return build_grid(domain, n_r, n_theta, r_nodes=r, theta_nodes=th)


def bubble_test_function(bspec: BubbleSpec, grid: Grid2D, cutoff: bool = True) -> GridFunction:
    """``phi(x) (mu / (1 + mu^2 |x - x0|^2))^{(N-2)/2}`` with ``phi`` the quintic cutoff."""
    rho, z = grid.physical_coordinates()
    d = np.hypot(rho, z - bspec.center)
    mu = bspec.mu
    v = (mu / (1.0 + mu * mu * d * d)) ** ((grid.N - 2) / 2.0)
    if cutoff:
        v = v * quintic_cutoff(d, bspec.cutoff)
    return GridFunction(grid, v).masked()


def _check_perturbed(spec: ProblemSpec) -> tuple[float, float]:
    if spec.label != "perturbed":
        raise ParameterError("expected the perturbed problem (ProblemSpec.perturbed)")
    N = spec.N
    s = spec.poles[0].s
    p = spec.poles[1].power
    lo, hi = critical_exponent(N, s) - 1.0, (N + 2.0) / (N - 2.0)
    if N < 4 or not lo < p < hi:
        raise ParameterError(f"need N >= 4 and {lo:g} < p < {hi:g}; got N={N}, p={p:g}")
    return s, p


@dataclass(frozen=True)
class BubbleRecord:
    mu: float
    supPhi: float
    tAtMax: float
    threshold: float
    inconclusive: bool

    @property
    def margin(self) -> float:
        return self.threshold - self.supPhi

    @property
    def below(self) -> bool:
        return self.supPhi < self.threshold

    def to_record(self) -> dict:
        return {"mu": self.mu, "supPhi": self.supPhi, "tAtMax": self.tAtMax, "threshold": self.threshold,
                "margin": self.margin, "below": self.below, "inconclusive": self.inconclusive}


def _sup(u: GridFunction, spec: ProblemSpec) -> tuple[float, float]:
    F = Functional(spec.with_domain(u.grid.domain), u.grid)
    A, B = F.terms(u.flat)
    t = ray_maximizer(A, F.coeffs, B, F.q)
    return ray_energy(t, A, F.coeffs, B, F.q), t


def bubble_threshold_check(
    spec: ProblemSpec,
    mu_list: Sequence[float] = (4.0, 8.0, 16.0, 32.0),
    radius: float = 2.0,
    n_r: int = 160,
    n_theta: int = 160,
    ratio: float = 160.0,
) -> list[BubbleRecord]:
    """``sup_t Phi(t v_mu)`` of the perturbed functional for each ``mu``.

    The domain is the flat half ball of the given radius; the bubble sits on
    the axis at half the radius with a cutoff of 0.4 times the radius.

    Raises
    ------
    ParameterError
        Outside ``N >= 4``, ``2*(s) - 1 < p < (N+2)/(N-2)``.
    """
    _check_perturbed(spec)
    domain = AxisymmetricDomain.half_ball(spec.N, radius)
    thr = sobolev_threshold(spec.N)
    out = []
    for mu in mu_list:
        b = BubbleSpec(0.5 * radius, mu, 0.4 * radius)
        u = bubble_test_function(b, bubble_grid(domain, b, n_r, n_theta, ratio))
        val, t = _sup(u, spec)
        out.append(BubbleRecord(float(mu), val, t, thr, b.inconclusive))
    return out


def bubble_calibration(N: int, mu: float = 256.0, n_r: int = 160, n_theta: int = 160,
                       ratio: float = 160.0) -> tuple[float, float]:
    """``(sup_t Phi(t v_mu), (1/N) S_N^{N/2})`` with only the critical term.

    The cut-off bubble on the unit half ball approaches the Sobolev level
    from above as ``mu`` grows (cutoff error of order ``mu^{2-N}``).
    """
    spec = ProblemSpec(N, (Pole(1.0, 0.0),), label="critical")
    domain = AxisymmetricDomain.half_ball(N, 1.0)
    b = BubbleSpec(0.5, mu, 0.4)
    u = bubble_test_function(b, bubble_grid(domain, b, n_r, n_theta, ratio))
    return _sup(u, spec)[0], sobolev_threshold(N)


@dataclass(frozen=True)
class Bookkeeping:
    """Dirichlet, Hardy and critical integrals of a Nehari-scaled bubble.

    ``A + B - P - C = 0`` holds by construction, with ``P`` the ``u^{p+1}``
    integral; as ``mu`` grows the weak limit vanishes, ``P -> 0`` and
    ``C = A + B``.
    """

    mu: float
    A: float
    B: float
    C: float
    P: float
    level: float

    @property
    def defect(self) -> float:
        """``|C - (A + B)| / C``."""
        return abs(self.C - self.A - self.B) / self.C

    def level_formula(self, N: int, s: float) -> float:
        """``A/2 + B/2*(s) - (N-2) C/(2N)``."""
        return 0.5 * self.A + self.B / critical_exponent(N, s) - (N - 2.0) * self.C / (2.0 * N)


def bookkeeping_check(spec: ProblemSpec, mu: float = 16384.0, radius: float = 1.0 / 64.0, n_r: int = 160,
                      n_theta: int = 160, ratio: float = 160.0) -> Bookkeeping:
    """Integrals of ``t0 v_mu`` with ``t0`` the ray maximizer of the perturbed functional.

    Concentration is governed by ``mu * radius``, and the ``u^{p+1}``
    integral vanishes like ``mu^{-1/2}``; a small domain with large ``mu``
    reaches the vanishing weak-limit regime on a grid (scaled with the
    domain) that still resolves the bubble.
    """
    _check_perturbed(spec)
    domain = AxisymmetricDomain.half_ball(spec.N, radius)
    b = BubbleSpec(0.5 * radius, mu, 0.4 * radius)
    u = bubble_test_function(b, bubble_grid(domain, b, n_r, n_theta, ratio))
    F = Functional(spec.with_domain(domain), u.grid)
    A, B = F.terms(u.flat)
    t = ray_maximizer(A, F.coeffs, B, F.q)
    Bs = t ** (F.q + 1) * B
    return Bookkeeping(float(mu), t * t * A, float(Bs[0]), float(Bs[2]), float(Bs[1]),
                       ray_energy(t, A, F.coeffs, B, F.q))
