"""Exponent algebra, problem specification and closed-form transforms.

Everything here is a pure function of its arguments.  The PDE handled by the
rest of the package is

    Delta u + sum_i c_i * u**q_i / |x - P_i|**s_i = 0,

where each term is a :class:`Pole`.  A pure power term is a pole with
``s = 0``; a term with an explicit power (not tied to ``2*(s)``) sets
``power``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import (
    ExcludedCaseError,
    ParameterError,
    SingularPointError,
)

__all__ = [
    "critical_exponent",
    "ExponentSet",
    "exponent_set",
    "subcritical_exponents",
    "blowup_scale",
    "intermediate_scale",
    "CKNParams",
    "ckn_to_hardy",
    "Pole",
    "ProblemSpec",
    "kelvin_point",
    "kelvin_transform",
    "MovingSphereProbe",
    "moving_sphere_weight",
    "moving_sphere_weight_derivative",
    "sphere_weight_lhs",
]


def _check_dim(N: int) -> None:
    if int(N) != N or N < 3:
        raise ParameterError(f"dimension must be an integer >= 3, got {N!r}")


def _check_s(s: float, name: str = "s") -> None:
    if not (0.0 <= s <= 2.0):
        raise ParameterError(f"{name} must lie in [0, 2], got {s!r}")


def critical_exponent(N: int, s: float) -> float:
    """Hardy-Sobolev critical exponent ``2*(s) = 2(N - s)/(N - 2)``."""
    _check_dim(N)
    _check_s(s)
    return 2.0 * (N - s) / (N - 2.0)


def offset_factor(s: float, s_lead: float) -> float:
    """Ratio by which the subcritical offset of a pole scales with ``eps``.

    The leading (most singular) pole loses exactly ``eps``; a pole with
    exponent ``s`` loses ``(2 - s)/(2 - s_lead) * eps`` so that all terms
    share one blow-up scale.
    """
    if s_lead >= 2.0:
        raise ParameterError("subcritical offsets are undefined when the leading s equals 2")
    return (2.0 - s) / (2.0 - s_lead)


@dataclass(frozen=True)
class ExponentSet:
    """Critical and subcritical exponents of the two-pole problem."""

    N: int
    s1: float
    s2: float
    epsilon: float
    twoStar1: float
    twoStar2: float
    p1: float
    p2: float
    p1eps: float
    p2eps: float


def exponent_set(N: int, s1: float, s2: float, epsilon: float = 0.0) -> ExponentSet:
    t1 = critical_exponent(N, s1)
    t2 = critical_exponent(N, s2)
    p1eps, p2eps = subcritical_exponents(N, s1, s2, epsilon)
    return ExponentSet(N, s1, s2, epsilon, t1, t2, t1 - 1.0, t2 - 1.0, p1eps, p2eps)


def subcritical_exponents(N: int, s1: float, s2: float, epsilon: float) -> tuple[float, float]:
    """Return ``(p1(eps), p2(eps))``.

    ``p1(eps) = 2*(s1) - 1 - eps`` and
    ``p2(eps) = 2*(s2) - 1 - (2 - s2)/(2 - s1) * eps``.
    """
    _check_s(s1, "s1")
    _check_s(s2, "s2")
    if not s1 > s2:
        raise ParameterError(f"need s1 > s2, got s1={s1}, s2={s2}")
    if epsilon < 0:
        raise ParameterError("epsilon must be >= 0")
    p1 = critical_exponent(N, s1) - 1.0
    p2 = critical_exponent(N, s2) - 1.0
    if epsilon == 0.0:
        return p1, p2
    p1e = p1 - epsilon
    p2e = p2 - offset_factor(s2, s1) * epsilon
    if p1e <= 1.0 or p2e <= 1.0:
        raise ParameterError(
            f"epsilon={epsilon} leaves an exponent <= 1 (p1eps={p1e}, p2eps={p2e})"
        )
    return p1e, p2e


def blowup_scale(m: float, N: int, s1: float, s2: float, epsilon: float) -> float:
    """Concentration length ``k = m**(-(p2(eps) - 1)/(2 - s2))``.

    The equivalent closed form ``m**(-2/(N-2) + eps/(2 - s1))`` is evaluated
    too; the two must agree to 1e-12 relative or an :class:`AssertionError`
    is raised.
    """
    if not m > 0:
        raise ParameterError(f"m must be positive, got {m!r}")
    _, p2e = subcritical_exponents(N, s1, s2, epsilon)
    e_def = -(p2e - 1.0) / (2.0 - s2)
    e_closed = -2.0 / (N - 2.0) + epsilon / (2.0 - s1)
    k = m**e_def
    k_closed = m**e_closed
    if abs(k - k_closed) > 1e-12 * max(abs(k), abs(k_closed)):
        raise AssertionError(f"scale-law identity broken: {k!r} vs {k_closed!r}")
    return k


def intermediate_scale(absx: float, k: float, s2: float) -> float:
    """``r = |x|**(s2/2) * k**((2 - s2)/2)``."""
    if not (absx > 0 and k > 0):
        raise ParameterError("absx and k must be positive")
    return absx ** (s2 / 2.0) * k ** ((2.0 - s2) / 2.0)


@dataclass(frozen=True)
class CKNParams:
    """Caffarelli-Kohn-Nirenberg weights ``(a, b)`` in dimension ``N``."""

    a: float
    b: float
    N: int

    def __post_init__(self) -> None:
        _check_dim(self.N)
        if not self.a < (self.N - 2) / 2.0:
            raise ParameterError("need a < (N - 2)/2")
        if not (self.a <= self.b <= self.a + 1.0):
            raise ParameterError("need a <= b <= a + 1")

    @property
    def q(self) -> float:
        return 2.0 * self.N / (self.N - 2.0 + 2.0 * (self.b - self.a))


def ckn_to_hardy(params: CKNParams) -> tuple[float, float]:
    """Map CKN weights to the Hardy coefficient and singular exponent.

    Returns ``(lam, s)`` with ``lam = a(N - 2 - a)`` and ``s = (b - a) q``.
    The linear endpoint ``b = a + 1`` is rejected.
    """
    a, b, N = params.a, params.b, params.N
    if b == a + 1.0:
        raise ExcludedCaseError("b = a + 1 gives s = 2, a linear problem; excluded")
    lam = a * (N - 2.0 - a)
    s = (b - a) * params.q
    return lam, s


@dataclass(frozen=True)
class Pole:
    """One nonlinear term ``coeff * u**q / |x - P|**s``.

    ``z`` locates the pole on the symmetry axis (``z = 0`` is the boundary
    origin).  ``power`` overrides the critical power ``2*(s) - 1`` and is then
    exempt from the subcritical offset.
    """

    coeff: float
    s: float
    z: float = 0.0
    power: float | None = None

    def __post_init__(self) -> None:
        _check_s(self.s)


@dataclass(frozen=True)
class ProblemSpec:
    """Dimension, nonlinear terms, subcritical offset and domain."""

    N: int
    poles: tuple[Pole, ...]
    epsilon: float = 0.0
    domain: Any = None
    label: str = ""

    def __post_init__(self) -> None:
        _check_dim(self.N)
        object.__setattr__(self, "poles", tuple(self.poles))
        if not self.poles:
            raise ParameterError("at least one nonlinear term is required")
        if self.epsilon < 0:
            raise ParameterError("epsilon must be >= 0")
        q = self.exponents()
        for qi in q:
            if qi < 1.0 or (self.epsilon > 0 and qi <= 1.0):
                raise ParameterError(f"effective exponent {qi} is not > 1")

    # -- constructors -------------------------------------------------
    @classmethod
    def two_pole(
        cls,
        N: int,
        s1: float,
        s2: float,
        lam: float,
        epsilon: float = 0.0,
        domain: Any = None,
    ) -> "ProblemSpec":
        """The main equation ``Delta u + lam u^p1/|x|^s1 + u^p2/|x|^s2 = 0``."""
        _check_s(s1, "s1")
        _check_s(s2, "s2")
        if not s2 < s1:
            raise ParameterError(f"need s2 < s1, got s1={s1}, s2={s2}")
        if epsilon > 0:
            subcritical_exponents(N, s1, s2, epsilon)
        return cls(N, (Pole(lam, s1), Pole(1.0, s2)), epsilon, domain, "two-pole")

    @classmethod
    def perturbed(cls, N: int, s: float, p: float, domain: Any = None) -> "ProblemSpec":
        """``Delta u - u^(2*(s)-1)/|x|^s + u^p + u^((N+2)/(N-2)) = 0``."""
        return cls(
            N,
            (Pole(-1.0, s), Pole(1.0, 0.0, power=p), Pole(1.0, 0.0)),
            0.0,
            domain,
            "perturbed",
        )

    @classmethod
    def multi_pole(
        cls, N: int, s_list: Sequence[float], z_list: Sequence[float] | None = None, domain: Any = None
    ) -> "ProblemSpec":
        """``Delta u - sum u^(2*(s_i)-1)/|x-P_i|^s_i + u^((N+2)/(N-2)) = 0``."""
        z_list = [0.0] * len(s_list) if z_list is None else list(z_list)
        poles = [Pole(-1.0, s, z) for s, z in zip(s_list, z_list)]
        poles.append(Pole(1.0, 0.0))
        return cls(N, tuple(poles), 0.0, domain, "multi-pole")

    # -- derived quantities ---------------------------------------------
    @property
    def s_lead(self) -> float:
        return max(p.s for p in self.poles if p.power is None) if any(
            p.power is None for p in self.poles
        ) else 0.0

    def exponents(self) -> tuple[float, ...]:
        """Effective powers ``q_i`` (``u**q_i`` in the PDE)."""
        out = []
        for p in self.poles:
            if p.power is not None:
                out.append(float(p.power))
                continue
            q = critical_exponent(self.N, p.s) - 1.0
            if self.epsilon > 0:
                q -= offset_factor(p.s, self.s_lead) * self.epsilon
            out.append(q)
        return tuple(out)

    def critical_exponents(self) -> tuple[float, ...]:
        """Powers at ``epsilon = 0`` (overrides kept)."""
        return tuple(
            float(p.power) if p.power is not None else critical_exponent(self.N, p.s) - 1.0
            for p in self.poles
        )

    def with_epsilon(self, epsilon: float) -> "ProblemSpec":
        return ProblemSpec(self.N, self.poles, epsilon, self.domain, self.label)

    def with_domain(self, domain: Any) -> "ProblemSpec":
        return ProblemSpec(self.N, self.poles, self.epsilon, domain, self.label)

    @property
    def s1(self) -> float:
        return self.poles[0].s

    @property
    def s2(self) -> float:
        return self.poles[1].s

    @property
    def lam(self) -> float:
        return self.poles[0].coeff

    def blowup_scale(self, m: float) -> float:
        """Concentration length for this spec (two-pole problems)."""
        if self.label == "two-pole":
            return blowup_scale(m, self.N, self.s1, self.s2, self.epsilon)
        # generic: scale at which the leading critical term is order one
        return m ** (-2.0 / (self.N - 2.0))


# ---------------------------------------------------------------------------
# Kelvin transform
# ---------------------------------------------------------------------------


def kelvin_point(y: np.ndarray, center: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Inversion of points ``y`` (shape ``(..., d)``) in the sphere ``(center, radius)``.

    Returns ``(image, factor)`` where ``image = center + radius^2 (y-c)/|y-c|^2``
    and ``factor = radius/|y - c|`` (raise it to ``N - 2`` for the Kelvin weight).
    """
    y = np.asarray(y, dtype=float)
    c = np.asarray(center, dtype=float)
    d = y - c
    d2 = np.sum(d * d, axis=-1)
    if np.any(d2 == 0.0):
        raise SingularPointError("Kelvin transform evaluated at the inversion centre")
    image = c + (radius**2) * d / d2[..., None]
    return image, radius / np.sqrt(d2)


def kelvin_transform(u, center_z: float = 0.0, radius: float = 1.0, target=None, outside: str = "decay"):
    """Kelvin transform of an axisymmetric :class:`~hslab.grid.GridFunction`.

    The inversion centre must lie on the symmetry axis at height ``center_z``.
    The result is sampled on ``target`` (default: ``u``'s own grid) as
    ``y -> (radius/|y-c|)**(N-2) * u(c + radius^2 (y-c)/|y-c|^2)``.

    Images falling outside ``u``'s grid are handled by ``outside``:
    ``"decay"`` extrapolates with the far-field model ``a(theta) |x|**(1-N)``
    fitted on the outer shell, ``"zero"`` uses 0 and ``"nan"`` flags them
    with NaN.  Target nodes sitting exactly on the centre get the limit of
    the chosen model (0 for ``"decay"``/``"zero"``).
    """
    from .grid import GridFunction

    grid = u.grid
    target = grid if target is None else target
    N = grid.N
    rho, z = target.physical_coordinates()
    pts = np.stack([rho.ravel(), z.ravel()], axis=-1)
    c = np.array([0.0, center_z])
    d2 = np.sum((pts - c) ** 2, axis=-1)
    at_center = d2 == 0.0
    out = np.zeros(len(pts))
    ok = ~at_center
    image, factor = kelvin_point(pts[ok], c, radius)
    vals = u.evaluate(image[:, 0], image[:, 1], outside=outside)
    out[ok] = factor ** (N - 2) * vals
    if outside == "nan":
        out[at_center] = np.nan
    return GridFunction(target, out.reshape(target.shape))


# ---------------------------------------------------------------------------
# Moving-sphere ingredients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MovingSphereProbe:
    """Centre ``x_R = (0, ..., 0, -R)``, sphere radius and a unit direction.

    ``theta`` is a unit vector with positive last component; the ray
    ``x_R + mu * theta`` crosses the boundary plane at ``mu1 = R/theta_N``.
    """

    R: float
    sphereRadius: float
    theta: tuple[float, ...] = field(default=(0.0, 0.0, 1.0))

    def __post_init__(self) -> None:
        th = np.asarray(self.theta, dtype=float)
        if not self.R > 0:
            raise ParameterError("R must be positive")
        if not self.sphereRadius > self.R:
            raise ParameterError("sphere radius must exceed R")
        if abs(np.linalg.norm(th) - 1.0) > 1e-12:
            raise ParameterError("theta must be a unit vector")
        if not th[-1] > 0:
            raise ParameterError("theta_N must be positive")

    @property
    def N(self) -> int:
        return len(self.theta)

    @property
    def theta_N(self) -> float:
        return float(self.theta[-1])

    @property
    def mu1(self) -> float:
        return self.R / self.theta_N

    @property
    def mu_max(self) -> float:
        """Upper end ``sphereRadius^2 / R`` of the monotonicity interval."""
        return self.sphereRadius**2 / self.R

    def _dist2(self, mu):
        # |x_R + mu theta|^2 = mu^2 - 2 mu R theta_N + R^2
        return mu * mu - 2.0 * mu * self.R * self.theta_N + self.R**2


def moving_sphere_weight(probe: MovingSphereProbe, mu):
    """``eta(mu) = mu^2 / |x_R + mu theta|^2`` for ``mu > mu1``."""
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= probe.mu1):
        raise ParameterError(f"mu must exceed mu1 = {probe.mu1}")
    out = mu * mu / probe._dist2(mu)
    return float(out) if out.ndim == 0 else out


def moving_sphere_weight_derivative(probe: MovingSphereProbe, mu):
    """``eta'(mu)`` through ``|x_R + mu theta|^4 eta' = 2 mu R theta_N (mu1 - mu)``."""
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= probe.mu1):
        raise ParameterError(f"mu must exceed mu1 = {probe.mu1}")
    out = 2.0 * mu * probe.R * probe.theta_N * (probe.mu1 - mu) / probe._dist2(mu) ** 2
    return float(out) if out.ndim == 0 else out


def sphere_weight_lhs(y: np.ndarray, R: float, radius: float, s: float) -> np.ndarray:
    """Left side of the weight comparison, to be bounded by ``|y|**(-s)``.

    ``(radius/|y - x_R|)**(2s) * |x_R + radius^2 (y - x_R)/|y - x_R|^2|**(-s)``
    for ``y`` (shape ``(..., N)``) in ``B_radius(x_R)`` above the boundary plane.
    """
    y = np.asarray(y, dtype=float)
    N = y.shape[-1]
    xR = np.zeros(N)
    xR[-1] = -R
    image, factor = kelvin_point(y, xR, radius)
    return factor ** (2 * s) * np.linalg.norm(image, axis=-1) ** (-s)
