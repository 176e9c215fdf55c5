"""Energy, gradient, ray maximisation and integral identities.

For a :class:`~hslab.model.ProblemSpec` with terms ``(c_i, s_i, q_i)``

    Phi(u) = A/2 - sum_i c_i B_i / (q_i + 1),
    A      = int |grad u|^2,
    B_i    = int (u^+)^(q_i + 1) / |x - P_i|^s_i.

The power integrals use the bilinear interpolant of ``u^+`` evaluated at
Gauss points, so ``Phi(u) = Phi(u^+)`` in the power terms and the discrete
gradient is the exact derivative of the discrete energy.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq

from .errors import InvariantViolation, NehariError, ParameterError
from .grid import GridFunction, Grid2D, dirichlet_energy, pohozaev_boundary_term
from .model import ProblemSpec, critical_exponent

__all__ = [
    "EnergyBreakdown",
    "Functional",
    "energy",
    "gradient",
    "ray_energy",
    "ray_maximizer",
    "nehari_scale",
    "PohozaevReport",
    "pohozaev_residual",
    "pohozaev_from_terms",
    "energy_identities",
    "level_formula",
    "ConcentrationBookkeeping",
    "concentration_bookkeeping",
]


@dataclass(frozen=True)
class EnergyBreakdown:
    """Dirichlet integral, weighted power integrals and derived scalars."""

    A: float
    B: tuple[float, ...]
    coeffs: tuple[float, ...]
    exponents: tuple[float, ...]
    phi: float
    nehari: float
    pohozaev: float = float("nan")
    boundaryTerm: float = float("nan")
    starShaped: bool = True

    @property
    def B1(self) -> float:
        return self.B[0]

    @property
    def B2(self) -> float:
        return self.B[1] if len(self.B) > 1 else float("nan")

    def to_record(self) -> dict[str, float]:
        """Flat record with keys ``A, B1, B2, ..., phi, nehari, pohozaev``."""
        rec = {"A": self.A}
        for i, b in enumerate(self.B, start=1):
            rec[f"B{i}"] = b
        rec["phi"] = self.phi
        rec["nehari"] = self.nehari
        rec["pohozaev"] = self.pohozaev
        return rec


class Functional:
    """Discrete energy of ``spec`` on ``grid`` with cached quadrature weights.

    Methods act on full nodal vectors (length ``grid.size``).
    """

    def __init__(self, spec: ProblemSpec, grid: Grid2D):
        if spec.N != grid.N:
            raise ParameterError("spec and grid dimensions differ")
        self.spec = spec
        self.grid = grid
        self.coeffs = np.array([p.coeff for p in spec.poles])
        self.q = np.array(spec.exponents())
        self.weights = [grid.pole_weight(p.s, p.z) for p in spec.poles]
        self.P = grid.interp
        self.K = grid.stiffness

    def terms(self, v: np.ndarray) -> tuple[float, np.ndarray]:
        """``(A, B)`` for the nodal vector ``v``."""
        A = float(v @ (self.K @ v))
        ug = self.P @ np.maximum(v, 0.0)
        B = np.array([float(w @ ug ** (q + 1)) for w, q in zip(self.weights, self.q)])
        return A, B

    def phi_from_terms(self, A: float, B: np.ndarray, t: float = 1.0) -> float:
        return ray_energy(t, A, self.coeffs, B, self.q)

    def value(self, v: np.ndarray) -> float:
        A, B = self.terms(v)
        return self.phi_from_terms(A, B)

    def power_gradient(self, v: np.ndarray) -> np.ndarray:
        """Derivative of ``sum c_i B_i/(q_i+1)``."""
        vp = np.maximum(v, 0.0)
        ug = self.P @ vp
        acc = np.zeros_like(ug)
        for c, w, q in zip(self.coeffs, self.weights, self.q):
            acc += c * w * ug**q
        return (self.P.T @ acc) * (v > 0)

    def grad(self, v: np.ndarray) -> np.ndarray:
        """Euclidean gradient of ``Phi`` with respect to all nodal values."""
        return self.K @ v - self.power_gradient(v)

    def reaction(self, v: np.ndarray) -> np.ndarray:
        """Weak residual ``K v - f(v)`` at every node, Dirichlet nodes included."""
        ug = self.P @ np.maximum(v, 0.0)
        acc = np.zeros_like(ug)
        for c, w, q in zip(self.coeffs, self.weights, self.q):
            acc += c * w * ug**q
        return self.K @ v - self.P.T @ acc

    def power_hessian(self, v: np.ndarray) -> sp.csr_matrix:
        vp = np.maximum(v, 0.0)
        ug = self.P @ vp
        acc = np.zeros_like(ug)
        for c, w, q in zip(self.coeffs, self.weights, self.q):
            acc += c * q * w * ug ** (q - 1)
        pos = sp.diags((v > 0).astype(float))
        return (pos @ self.P.T @ sp.diags(acc) @ self.P @ pos).tocsr()

    def breakdown(self, v: np.ndarray, with_pohozaev: bool = True) -> EnergyBreakdown:
        A, B = self.terms(v)
        phi = self.phi_from_terms(A, B)
        neh = float(A - self.coeffs @ B)
        pz = bt = float("nan")
        star = self.grid.domain.star_shaped
        if with_pohozaev and all(p.z == 0.0 for p in self.spec.poles):
            bt = pohozaev_boundary_term(GridFunction(self.grid, v), self.reaction(v))
            pz = pohozaev_from_terms(self.spec, A, B, bt)
        return EnergyBreakdown(
            A, tuple(float(b) for b in B), tuple(self.coeffs.tolist()), tuple(self.q.tolist()),
            phi, neh, pz, bt, star,
        )


def _functional(u: GridFunction, spec: ProblemSpec) -> Functional:
    cache = u.grid.__dict__.setdefault("_functional_cache", {})
    key = (spec.N, spec.poles, spec.epsilon)
    if key not in cache:
        cache[key] = Functional(spec, u.grid)
    return cache[key]


def energy(u: GridFunction, spec: ProblemSpec) -> EnergyBreakdown:
    """All energy terms of ``u`` (exponents include the subcritical offset)."""
    return _functional(u, spec).breakdown(u.flat)


def gradient(u: GridFunction, spec: ProblemSpec) -> GridFunction:
    """Discrete weak residual ``<Phi'(u), phi_j>``, zero on Dirichlet nodes.

    ``<g, h>`` with the Euclidean pairing of nodal vectors equals the
    directional derivative of :func:`energy` along ``h`` for masked ``h``.
    """
    g = _functional(u, spec).grad(u.flat)
    out = GridFunction(u.grid, g)
    return out.masked()


# ---------------------------------------------------------------------------
# Ray maximisation
# ---------------------------------------------------------------------------


def ray_energy(t, A: float, coeffs: Sequence[float], B: Sequence[float], q: Sequence[float]):
    """``Phi(t u) = t^2 A/2 - sum c_i B_i t^(q_i+1)/(q_i+1)``."""
    t = np.asarray(t, dtype=float)
    out = 0.5 * A * t**2
    for c, b, qi in zip(coeffs, B, q):
        out = out - c * b * t ** (qi + 1) / (qi + 1)
    return float(out) if out.ndim == 0 else out


def _ray_slope(logt, A, coeffs, B, q):
    # d/dt Phi(tu) / t = A - sum c_i B_i t^(q_i - 1)
    t = np.exp(logt)
    out = A
    for c, b, qi in zip(coeffs, B, q):
        out = out - c * b * t ** (qi - 1)
    return out


def ray_maximizer(A: float, coeffs: Sequence[float], B: Sequence[float], q: Sequence[float], n_scan: int = 400) -> float:
    """Unique ``t* > 0`` with ``d/dt Phi(t u) = 0``.

    A log-spaced scan brackets every sign change of the slope; one change
    is required.  No change raises :class:`NehariError`; several raise
    :class:`InvariantViolation`.
    """
    coeffs = np.asarray(coeffs, float)
    B = np.asarray(B, float)
    q = np.asarray(q, float)
    if not A > 0:
        raise NehariError("zero Dirichlet integral, the ray has no maximum")
    active = (coeffs * B != 0) & (q > 1)
    if not np.any(active & (coeffs * B > 0)):
        raise NehariError("no positive power term, Phi(tu) grows without bound")
    with np.errstate(over="ignore", divide="ignore"):
        scales = (A / np.abs(coeffs[active] * B[active])) ** (1.0 / (q[active] - 1.0))
    # negligible terms give infinite scales and cannot bracket the root
    scales = scales[np.isfinite(scales) & (scales > 0)]
    if scales.size == 0:
        raise NehariError("power terms too small to balance the Dirichlet integral")
    lo = math.log(scales.min()) - 12.0
    hi = math.log(scales.max()) + 12.0
    grid = np.linspace(lo, hi, n_scan)
    with np.errstate(over="ignore", invalid="ignore"):
        vals = _ray_slope(grid, A, coeffs, B, q)
    # overflow only happens far out, where the top positive power dominates
    vals = np.where(np.isnan(vals), -np.inf, vals)
    sign = np.sign(vals)
    changes = np.flatnonzero(sign[:-1] * sign[1:] < 0)
    exact = np.flatnonzero(vals == 0)
    if len(changes) + len(exact) == 0:
        raise NehariError("the ray t -> Phi(tu) has no interior maximum")
    if len(changes) + len(exact) > 1 or vals[-1] > 0:
        raise InvariantViolation("several critical points along the ray")
    if len(exact):
        return float(math.exp(grid[exact[0]]))
    k = changes[0]
    root = brentq(_ray_slope, grid[k], grid[k + 1], args=(A, coeffs, B, q), xtol=1e-15, rtol=1e-15)
    return float(math.exp(root))


def nehari_scale(u: GridFunction, spec: ProblemSpec) -> float:
    """``t*`` maximising ``t -> Phi(t u)`` for ``u >= 0``, ``u != 0``."""
    f = _functional(u, spec)
    A, B = f.terms(u.flat)
    return ray_maximizer(A, f.coeffs, B, f.q)


# ---------------------------------------------------------------------------
# Identities
# ---------------------------------------------------------------------------


def pohozaev_from_terms(spec: ProblemSpec, A: float, B: Sequence[float], boundary_term: float, exponents=None) -> float:
    """``(N-2)/2 A - sum c_i (N-s_i)/(q_i+1) B_i + boundary_term/2``."""
    q = spec.exponents() if exponents is None else exponents
    N = spec.N
    vol = 0.5 * (N - 2) * A
    for p, b, qi in zip(spec.poles, B, q):
        vol -= p.coeff * (N - p.s) / (qi + 1) * b
    return float(vol + 0.5 * boundary_term)


@dataclass(frozen=True)
class PohozaevReport:
    """Pohozaev residual with its pieces; ``float(report)`` gives the value."""

    value: float
    volumePart: float
    boundaryTerm: float
    starShaped: bool

    def __float__(self) -> float:
        return self.value


def pohozaev_residual(u: GridFunction, spec: ProblemSpec) -> PohozaevReport:
    """Pohozaev residual about the origin; zero for exact solutions.

    Emits a :class:`UserWarning` and sets ``starShaped=False`` when the
    domain is not star-shaped about the origin.
    """
    if any(p.z != 0.0 for p in spec.poles):
        raise ParameterError("the Pohozaev identity here needs every pole at the origin")
    f = _functional(u, spec)
    A, B = f.terms(u.flat)
    bt = pohozaev_boundary_term(u, f.reaction(u.flat))
    value = pohozaev_from_terms(spec, A, B, bt)
    star = u.grid.domain.star_shaped
    if not star:
        warnings.warn("domain is not star-shaped about the origin; the boundary term has no sign", UserWarning)
    return PohozaevReport(value, value - 0.5 * bt, bt, star)


def level_formula(spec: ProblemSpec, A: float, B: Sequence[float]) -> float:
    """Energy after eliminating the first power term with the Nehari identity.

    For two terms this is ``(1/2 - 1/(p1+1)) A + (1/(p1+1) - 1/(p2+1)) c2 B2``.
    """
    q = spec.exponents()
    out = (0.5 - 1.0 / (q[0] + 1)) * A
    for p, b, qi in zip(spec.poles[1:], B[1:], q[1:]):
        out += (1.0 / (q[0] + 1) - 1.0 / (qi + 1)) * p.coeff * b
    return float(out)


def energy_identities(u: GridFunction, spec: ProblemSpec, c_level: float) -> tuple[float, float, float]:
    """``(|Phi(u) - c_level|, |Nehari|, level formula)``."""
    f = _functional(u, spec)
    A, B = f.terms(u.flat)
    phi = f.phi_from_terms(A, B)
    neh = A - float(f.coeffs @ B)
    return abs(phi - c_level), abs(neh), level_formula(spec, A, B)


@dataclass(frozen=True)
class ConcentrationBookkeeping:
    """Integrals of the perturbed problem: gradient ``A``, Hardy ``B``,
    critical ``C`` and subcritical ``D`` parts, with the level combination."""

    A: float
    B: float
    C: float
    D: float
    N: int
    s: float
    phi: float

    @property
    def level(self) -> float:
        """``A/2 + B/2*(s) - (N-2) C/(2N)``."""
        return self.A / 2 + self.B / critical_exponent(self.N, self.s) - (self.N - 2) * self.C / (2 * self.N)

    @property
    def balance(self) -> float:
        """Relative defect of ``C = A + B``."""
        return abs(self.C - self.A - self.B) / self.C


def concentration_bookkeeping(u: GridFunction, spec: ProblemSpec) -> ConcentrationBookkeeping:
    """Split the perturbed functional of ``u`` into its four integrals."""
    if spec.label != "perturbed":
        raise ParameterError("bookkeeping applies to the perturbed problem")
    f = _functional(u, spec)
    A, B = f.terms(u.flat)
    return ConcentrationBookkeeping(A, float(B[0]), float(B[2]), float(B[1]), spec.N, spec.poles[0].s,
                                    f.phi_from_terms(A, B))
