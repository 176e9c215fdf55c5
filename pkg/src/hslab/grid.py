"""Axisymmetric domains, graded meridian grids and the discrete operators.

Fields depend on ``(rho, z)`` with ``rho = |x'|`` and ``z = x_N``.  Every
domain here is the image of the quarter disc ``{rho >= 0, z >= 0,
rho^2 + z^2 <= Rmax^2}`` under the inverse of the boundary-flattening shear
``(rho, z) -> (rho, z - alpha rho^2)``.  The grid is therefore laid out in
polar chart coordinates ``(r, theta)``:

* ``theta = 0`` is the (possibly curved) boundary face, Dirichlet;
* ``theta = pi/2`` is the symmetry axis, natural boundary condition;
* ``r = 0`` is the boundary origin and ``r = Rmax`` the truncation arc,
  both Dirichlet.

The shear has unit Jacobian, so the axisymmetric measure
``|S^{N-2}| rho^{N-2} drho dz`` is the same in chart and physical
coordinates.  Energies use bilinear elements with a 3x3 Gauss rule; the
strong-form residual and boundary derivatives use finite differences on the
same nodes, giving an independent check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RectBivariateSpline
from scipy.optimize import brentq
from scipy.sparse.linalg import spsolve
from scipy.special import gamma as gamma_fn

from .errors import ChartError, IntegrabilityError, ParameterError

__all__ = [
    "sphere_area",
    "BoundaryGraph",
    "AxisymmetricDomain",
    "flattening_map",
    "inverse_flattening_map",
    "mean_curvature",
    "Grid2D",
    "GridFunction",
    "graded_nodes",
    "focused_nodes",
    "geometric_nodes",
    "build_grid",
    "weighted_integral",
    "dirichlet_energy",
    "discrete_pde_residual",
    "polar_derivatives",
    "laplacian",
    "pohozaev_boundary_term",
    "BoundaryFlux",
    "boundary_flux",
    "save_grid_function",
    "load_grid_function",
]


def sphere_area(k: int) -> float:
    """Surface area of the unit sphere ``S^k`` in ``R^(k+1)``."""
    return 2.0 * math.pi ** ((k + 1) / 2.0) / gamma_fn((k + 1) / 2.0)


# ---------------------------------------------------------------------------
# Domains and the flattening chart
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryGraph:
    """Boundary graph ``z = alpha |x'|^2`` with chart radius ``r0``."""

    alpha: float
    cutoffRadius: float

    def __post_init__(self) -> None:
        if not self.cutoffRadius > 0:
            raise ParameterError("cutoff radius must be positive")
        if not abs(self.alpha) * self.cutoffRadius < 0.5:
            raise ParameterError("need |alpha| * r0 < 1/2 for the chart to be a diffeomorphism")

    @property
    def r0(self) -> float:
        return self.cutoffRadius

    def height(self, rho):
        return self.alpha * np.asarray(rho, dtype=float) ** 2


KINDS = ("TruncatedHalfSpace", "CurvedCap", "HalfBallFlat", "KelvinHalfBall")


@dataclass(frozen=True)
class AxisymmetricDomain:
    """Axisymmetric domain with the origin on its boundary.

    ``KelvinHalfBall`` is the half ball of radius ``Rmax`` standing in for the
    whole half-space: fields on it are extended outside by the Kelvin
    reflection in the sphere ``|x| = Rmax``, and its outer arc carries the
    matching Robin condition ``d_r u = -(N-2)/(2 Rmax) u`` instead of a
    Dirichlet condition.
    """

    kind: str
    N: int
    Rmax: float
    graph: BoundaryGraph | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ParameterError(f"unknown domain kind {self.kind!r}")
        if int(self.N) != self.N or self.N < 3:
            raise ParameterError("N must be an integer >= 3")
        if not self.Rmax > 0:
            raise ParameterError("Rmax must be positive")
        if self.kind == "CurvedCap":
            if self.graph is None:
                raise ParameterError("CurvedCap needs a BoundaryGraph")
            if self.Rmax > self.graph.r0:
                raise ParameterError("CurvedCap needs Rmax <= r0 so the cap lies in the chart")
        elif self.graph is not None and self.graph.alpha != 0.0:
            raise ParameterError(f"{self.kind} has a flat boundary")

    @classmethod
    def half_space(cls, N: int, Rmax: float) -> "AxisymmetricDomain":
        return cls("TruncatedHalfSpace", N, Rmax)

    @classmethod
    def half_ball(cls, N: int, Rmax: float) -> "AxisymmetricDomain":
        return cls("HalfBallFlat", N, Rmax)

    @classmethod
    def kelvin_half_ball(cls, N: int, radius: float = 1.0) -> "AxisymmetricDomain":
        return cls("KelvinHalfBall", N, radius)

    @property
    def kelvin(self) -> bool:
        return self.kind == "KelvinHalfBall"

    @classmethod
    def curved_cap(cls, N: int, alpha: float, Rmax: float, r0: float | None = None) -> "AxisymmetricDomain":
        r0 = Rmax if r0 is None else r0
        return cls("CurvedCap", N, Rmax, BoundaryGraph(alpha, r0))

    @property
    def alpha(self) -> float:
        return 0.0 if self.graph is None else self.graph.alpha

    @property
    def star_shaped(self) -> bool:
        """Star-shaped about the origin (only guaranteed for ``alpha >= 0``)."""
        return self.alpha >= 0.0

    def measure(self) -> float:
        """Exact N-dimensional volume (the shear preserves volume)."""
        return 0.5 * sphere_area(self.N - 1) * self.Rmax**self.N / self.N

    def scaled(self, factor: float) -> "AxisymmetricDomain":
        """Image under ``x -> factor * x`` (curvature scales as ``1/factor``)."""
        if self.graph is None:
            return AxisymmetricDomain(self.kind, self.N, self.Rmax * factor)
        g = BoundaryGraph(self.graph.alpha / factor, self.graph.r0 * factor)
        return AxisymmetricDomain(self.kind, self.N, self.Rmax * factor, g)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "N": self.N,
            "Rmax": self.Rmax,
            "alpha": self.alpha,
            "r0": None if self.graph is None else self.graph.r0,
        }


def _split(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] < 2:
        raise ParameterError("points need at least two coordinates")
    return x[..., :-1], x[..., -1]


def flattening_map(x, graph: BoundaryGraph) -> np.ndarray:
    """``(x', x_N) -> (x', x_N - alpha |x'|^2)`` for points with ``|x'| < r0``."""
    xp, xn = _split(x)
    rho2 = np.sum(xp * xp, axis=-1)
    if np.any(rho2 >= graph.r0**2):
        raise ChartError("point outside the flattening chart |x'| < r0")
    out = np.array(x, dtype=float, copy=True)
    out[..., -1] = xn - graph.alpha * rho2
    return out


def inverse_flattening_map(y, graph: BoundaryGraph) -> np.ndarray:
    yp, yn = _split(y)
    rho2 = np.sum(yp * yp, axis=-1)
    if np.any(rho2 >= graph.r0**2):
        raise ChartError("point outside the flattening chart |x'| < r0")
    out = np.array(y, dtype=float, copy=True)
    out[..., -1] = yn + graph.alpha * rho2
    return out


def mean_curvature(graph: BoundaryGraph, N: int) -> float:
    """Mean curvature at the origin, ``sum(alpha_i)/(N-1) = alpha``.

    Normalised so that the leading change of the Dirichlet integral of a
    flattened profile at scale ``eps`` is ``eps * H * K1``.
    """
    if N < 3:
        raise ParameterError("N must be >= 3")
    return float(graph.alpha)


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------

_GX = np.array([0.5 - 0.5 * math.sqrt(0.6), 0.5, 0.5 + 0.5 * math.sqrt(0.6)])
_GW = np.array([5.0, 8.0, 5.0]) / 18.0


def graded_nodes(R: float, n: int, gamma: float = 2.0) -> np.ndarray:
    """``R (j/n)^gamma`` for ``j = 0..n``."""
    if n < 8:
        raise ParameterError("need at least 8 intervals")
    if gamma < 1:
        raise ParameterError("grading exponent must be >= 1")
    return R * (np.arange(n + 1) / n) ** gamma


def geometric_nodes(a: float, b: float, n: int, h_min: float, toward: str = "b") -> np.ndarray:
    """``n`` intervals on ``[a, b]`` growing geometrically from width ``h_min``
    at the ``toward`` end."""
    if n < 8:
        raise ParameterError("need at least 8 intervals")
    L = b - a
    if not 0 < h_min * n < L:
        raise ParameterError("h_min must satisfy 0 < n h_min < b - a")
    f = lambda q: h_min * (q**n - 1) / (q - 1) - L
    q = brentq(f, 1 + 1e-12, 10.0)
    steps = h_min * q ** np.arange(n)
    x = np.concatenate([[0.0], np.cumsum(steps)])
    x = x / x[-1] * L
    nodes = b - x[::-1] if toward == "b" else a + x
    nodes[0], nodes[-1] = a, b
    return nodes


def focused_nodes(a: float, b: float, n: int, focus: float, width: float, ratio: float = 20.0,
                  tail: float = 0.0, flatness: int = 2) -> np.ndarray:
    """Nodes on ``[a, b]`` whose spacing is ``ratio`` times finer near ``focus``.

    Node density is ``1 + (ratio - 1)/(1 + |u|^flatness) + tail/(1 + |u|)``
    with ``u = (x - focus)/width``.  ``flatness = 2`` is a Lorentzian peak;
    larger values give a nearly uniform fine patch of half-width ``width``.
    The ``tail`` term keeps a fixed number of nodes per octave of distance
    from the focus.
    """
    if n < 8:
        raise ParameterError("need at least 8 intervals")
    # fine sampling of the density near the focus, uniform elsewhere
    x = np.union1d(np.linspace(a, b, 20001), np.clip(focus + width * np.sinh(np.linspace(-12, 12, 4001)), a, b))
    u = np.abs(x - focus) / width
    dens = 1.0 + (ratio - 1.0) / (1.0 + u**flatness) + tail / (1.0 + u)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(x))])
    nodes = np.interp(np.linspace(0.0, cum[-1], n + 1), cum, x)
    nodes[0], nodes[-1] = a, b
    return nodes


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Polar chart grid over an :class:`AxisymmetricDomain`.

    Parameters
    ----------
    domain : AxisymmetricDomain
    r : ndarray
        Radial nodes, ``r[0] = 0`` and ``r[-1] = Rmax``.
    theta : ndarray
        Angular nodes, ``theta[0] = 0`` and ``theta[-1] = pi/2``.
    gamma : float
        Grading exponent used to build ``r`` (informational).
    """

    domain: AxisymmetricDomain
    r: np.ndarray
    theta: np.ndarray
    gamma: float = 2.0

    def __post_init__(self) -> None:
        r = np.asarray(self.r, dtype=float)
        th = np.asarray(self.theta, dtype=float)
        if r.ndim != 1 or th.ndim != 1 or len(r) < 9 or len(th) < 9:
            raise ParameterError("node counts must be >= 8 intervals per direction")
        if np.any(np.diff(r) <= 0) or np.any(np.diff(th) <= 0):
            raise ParameterError("coordinates must be strictly increasing")
        if r[0] != 0.0 or abs(r[-1] - self.domain.Rmax) > 1e-12 * self.domain.Rmax:
            raise ParameterError("radial nodes must span [0, Rmax]")
        if th[0] != 0.0 or abs(th[-1] - math.pi / 2) > 1e-14:
            raise ParameterError("angular nodes must span [0, pi/2]")
        r = r.copy()
        r[-1] = self.domain.Rmax
        th = th.copy()
        th[-1] = math.pi / 2
        r.setflags(write=False)
        th.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "theta", th)

    # -- basic geometry --------------------------------------------------
    @property
    def N(self) -> int:
        return self.domain.N

    @property
    def alpha(self) -> float:
        return self.domain.alpha

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.r), len(self.theta))

    @property
    def size(self) -> int:
        return len(self.r) * len(self.theta)

    @cached_property
    def _mesh(self):
        R, T = np.meshgrid(self.r, self.theta, indexing="ij")
        return R, T

    def chart_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        R, T = self._mesh
        return R * np.cos(T), R * np.sin(T)

    def physical_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        rho, zeta = self.chart_coordinates()
        rho = np.where(np.isclose(self._mesh[1], math.pi / 2, rtol=0, atol=1e-15), 0.0, rho)
        return rho, zeta + self.alpha * rho**2

    def abs_x(self) -> np.ndarray:
        rho, z = self.physical_coordinates()
        return np.hypot(rho, z)

    @cached_property
    def dirichlet_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[0, :] = True
        if not self.domain.kelvin:
            m[-1, :] = True
        m[:, 0] = True
        m.setflags(write=False)
        return m

    @cached_property
    def free(self) -> np.ndarray:
        f = np.flatnonzero(~self.dirichlet_mask.ravel())
        f.setflags(write=False)
        return f

    def cell_volumes(self) -> np.ndarray:
        """Midpoint-rule measure of each cell, ``|S^{N-2}| rho^{N-2} r dr dtheta``."""
        rm = 0.5 * (self.r[1:] + self.r[:-1])
        tm = 0.5 * (self.theta[1:] + self.theta[:-1])
        dr = np.diff(self.r)
        dt = np.diff(self.theta)
        rho = rm[:, None] * np.cos(tm)[None, :]
        return sphere_area(self.N - 2) * rho ** (self.N - 2) * rm[:, None] * dr[:, None] * dt[None, :]

    def node_volumes(self) -> np.ndarray:
        """Lumped measure per node (row sums of the mass matrix)."""
        return (self.interp.T @ self.gauss_weight).reshape(self.shape)

    def scaled(self, factor: float) -> "Grid2D":
        """Same node pattern on the domain scaled by ``factor``."""
        return Grid2D(self.domain.scaled(factor), self.r * factor, self.theta, self.gamma)

    def with_domain(self, domain: AxisymmetricDomain) -> "Grid2D":
        if abs(domain.Rmax - self.domain.Rmax) > 1e-12 * domain.Rmax:
            raise ParameterError("domain Rmax must match the grid")
        return Grid2D(domain, self.r, self.theta, self.gamma)

    # -- finite element machinery -----------------------------------------
    @cached_property
    def _gauss(self):
        nr, nt = len(self.r) - 1, len(self.theta) - 1
        r0 = self.r[:-1][:, None]
        dr = np.diff(self.r)[:, None]
        t0 = self.theta[:-1][None, :]
        dt = np.diff(self.theta)[None, :]
        # gauss point coordinates, shape (nr, nt, 3, 3)
        xi = _GX[None, None, :, None]
        eta = _GX[None, None, None, :]
        rg = (r0 + 0 * t0)[:, :, None, None] + dr[:, :, None, None] * xi
        tg = (t0 + 0 * r0)[:, :, None, None] + dt[:, :, None, None] * eta
        rg = np.broadcast_to(rg, (nr, nt, 3, 3))
        tg = np.broadcast_to(tg, (nr, nt, 3, 3))
        w = _GW[:, None] * _GW[None, :]
        c, s = np.cos(tg), np.sin(tg)
        rho = rg * c
        jac = sphere_area(self.N - 2) * rho ** (self.N - 2) * rg
        W = jac * w[None, None] * dr[:, :, None, None] * dt[:, :, None, None]
        # bilinear shape functions and derivatives, local order
        # (i,j), (i+1,j), (i,j+1), (i+1,j+1)
        X = np.broadcast_to(xi, (nr, nt, 3, 3))
        Y = np.broadcast_to(eta, (nr, nt, 3, 3))
        phi = np.stack([(1 - X) * (1 - Y), X * (1 - Y), (1 - X) * Y, X * Y], axis=-1)
        dX = np.stack([-(1 - Y), (1 - Y), -Y, Y], axis=-1) / dr[:, :, None, None, None]
        dY = np.stack([-(1 - X), -X, (1 - X), X], axis=-1) / dt[:, :, None, None, None]
        # chart cartesian derivatives, then physical via the shear
        c5, s5, r5 = c[..., None], s[..., None], rg[..., None]
        Urho = c5 * dX - s5 / r5 * dY
        Uzeta = s5 * dX + c5 / r5 * dY
        a = self.alpha
        grad_rho = Urho - 2.0 * a * rho[..., None] * Uzeta
        grad_z = Uzeta
        I, J = np.meshgrid(np.arange(nr), np.arange(nt), indexing="ij")
        ntheta = len(self.theta)
        base = I * ntheta + J
        nodes = np.stack([base, base + ntheta, base + 1, base + ntheta + 1], axis=-1)
        return dict(r=rg, theta=tg, rho=rho, zeta=rg * s, W=W, phi=phi, grad_rho=grad_rho, grad_z=grad_z, nodes=nodes)

    @cached_property
    def interp(self) -> sp.csr_matrix:
        """Sparse map from nodal values to values at all Gauss points."""
        g = self._gauss
        nr, nt = g["nodes"].shape[:2]
        rows = np.arange(nr * nt * 9).reshape(nr, nt, 3, 3)
        rows = np.broadcast_to(rows[..., None], (nr, nt, 3, 3, 4))
        cols = np.broadcast_to(g["nodes"][:, :, None, None, :], (nr, nt, 3, 3, 4))
        M = sp.csr_matrix((g["phi"].ravel(), (rows.ravel(), cols.ravel())), shape=(nr * nt * 9, self.size))
        return M

    @cached_property
    def _grad_ops(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        g = self._gauss
        nr, nt = g["nodes"].shape[:2]
        rows = np.broadcast_to(np.arange(nr * nt * 9).reshape(nr, nt, 3, 3)[..., None], (nr, nt, 3, 3, 4))
        cols = np.broadcast_to(g["nodes"][:, :, None, None, :], (nr, nt, 3, 3, 4))
        shape = (nr * nt * 9, self.size)
        Gr = sp.csr_matrix((g["grad_rho"].ravel(), (rows.ravel(), cols.ravel())), shape=shape)
        Gz = sp.csr_matrix((g["grad_z"].ravel(), (rows.ravel(), cols.ravel())), shape=shape)
        return Gr, Gz

    @cached_property
    def gauss_weight(self) -> np.ndarray:
        return self._gauss["W"].ravel()

    @cached_property
    def gauss_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical ``(rho, z)`` at every Gauss point."""
        g = self._gauss
        rho = g["rho"].ravel()
        return rho, g["zeta"].ravel() + self.alpha * rho**2

    def gauss_gradient(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Physical gradient ``(u_rho, u_z)`` of the bilinear interpolant at Gauss points."""
        Gr, Gz = self._grad_ops
        v = np.asarray(values, dtype=float).ravel()
        return Gr @ v, Gz @ v

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """Matrix of the Dirichlet form ``int |grad u|^2`` over all nodes."""
        Gr, Gz = self._grad_ops
        Wd = sp.diags(self.gauss_weight)
        K = (Gr.T @ Wd @ Gr + Gz.T @ Wd @ Gz).tocsr()
        K = 0.5 * (K + K.T)
        if self.domain.kelvin:
            K = K + 0.5 * (self.N - 2) / self.r[-1] * self.arc_mass
        return K.tocsr()

    @cached_property
    def arc_mass(self) -> sp.csr_matrix:
        """Mass matrix ``int u v dsigma`` of the outer arc ``r = Rmax``."""
        R = self.r[-1]
        th = self.theta
        xg, wg = np.polynomial.legendre.leggauss(4)
        half = 0.5 * np.diff(th)
        tq = 0.5 * (th[1:] + th[:-1])[:, None] + half[:, None] * xg[None, :]
        dS = sphere_area(self.N - 2) * (R * np.cos(tq)) ** (self.N - 2) * R * half[:, None] * wg[None, :]
        h1 = 0.5 * (1 + xg)
        h0 = 1 - h1
        n = len(th)
        diag = np.zeros(n)
        diag[:-1] += (h0 * h0 * dS).sum(axis=1)
        diag[1:] += (h1 * h1 * dS).sum(axis=1)
        off = (h0 * h1 * dS).sum(axis=1)
        M1 = sp.diags([off, diag, off], [-1, 0, 1])
        idx = (len(self.r) - 1) * n + np.arange(n)
        P = sp.csr_matrix((np.ones(n), (idx, np.arange(n))), shape=(self.size, n))
        return (P @ M1 @ P.T).tocsr()

    @cached_property
    def stiffness_free(self) -> sp.csc_matrix:
        f = self.free
        return self.stiffness[f][:, f].tocsc()

    def pole_weight(self, s: float, z_pole: float = 0.0) -> np.ndarray:
        """Gauss weights times ``|x - P|^{-s}`` for a pole ``P`` on the axis."""
        key = (float(s), float(z_pole))
        cache = self.__dict__.setdefault("_pole_cache", {})
        if key not in cache:
            if s < 0:
                raise ParameterError("s must be >= 0")
            if s >= self.N:
                raise IntegrabilityError(f"|x|^-{s} is not locally integrable in dimension {self.N}")
            rho, z = self.gauss_points
            d = np.hypot(rho, z - z_pole)
            w = self.gauss_weight * d ** (-s) if s > 0 else self.gauss_weight.copy()
            w.setflags(write=False)
            cache[key] = w
        return cache[key]

    # -- finite differences ------------------------------------------------
    @cached_property
    def _fd(self):
        return _fd_weights(self.r), _fd_weights(self.theta)


def _fd_weights(x: np.ndarray):
    """Three-point first and second derivative weights at interior nodes."""
    h1 = x[1:-1] - x[:-2]
    h2 = x[2:] - x[1:-1]
    d1 = np.stack([-h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2))], axis=-1)
    d2 = np.stack([2 / (h1 * (h1 + h2)), -2 / (h1 * h2), 2 / (h2 * (h1 + h2))], axis=-1)
    return d1, d2


def _one_sided(x0, x1, x2):
    """Second-order weights for f'(x0) from nodes x0, x1, x2 (either side)."""
    h1 = x1 - x0
    h2 = x2 - x0
    w1 = h2 / (h1 * (h2 - h1))
    w2 = -h1 / (h2 * (h2 - h1))
    return -(w1 + w2), w1, w2


def build_grid(
    domain: AxisymmetricDomain,
    n_r: int,
    n_theta: int,
    gamma: float = 2.0,
    *,
    r_nodes: np.ndarray | None = None,
    theta_nodes: np.ndarray | None = None,
) -> Grid2D:
    """Graded polar grid: ``r_j = Rmax (j/n_r)^gamma`` and uniform angles.

    Explicit ``r_nodes``/``theta_nodes`` override the defaults (e.g. from
    :func:`focused_nodes`).
    """
    if n_r < 8 or n_theta < 8:
        raise ParameterError("need at least 8 intervals per direction")
    if gamma < 1:
        raise ParameterError("grading exponent must be >= 1")
    r = graded_nodes(domain.Rmax, n_r, gamma) if r_nodes is None else np.asarray(r_nodes, float)
    th = np.linspace(0.0, math.pi / 2, n_theta + 1) if theta_nodes is None else np.asarray(theta_nodes, float)
    return Grid2D(domain, r, th, gamma)


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class GridFunction:
    """Nodal values on a :class:`Grid2D`, indexed ``[i_r, j_theta]``.

    Solver states vanish on the Dirichlet nodes; reference fields (bubbles,
    extremals) may not, and :meth:`masked` zeroes them explicitly.
    """

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.size != self.grid.size:
            raise ParameterError("value array does not match the grid")
        self.values = v.reshape(self.grid.shape)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy())

    def masked(self) -> "GridFunction":
        v = self.values.copy()
        v[self.grid.dirichlet_mask] = 0.0
        return GridFunction(self.grid, v)

    def positive_part(self) -> "GridFunction":
        return GridFunction(self.grid, np.maximum(self.values, 0.0))

    def scaled(self, t: float) -> "GridFunction":
        return GridFunction(self.grid, t * self.values)

    def respects_mask(self, atol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.values[self.grid.dirichlet_mask]) <= atol))

    def max(self) -> float:
        return float(self.values.max())

    def argmax(self) -> tuple[float, float]:
        """Physical ``(rho, z)`` of the largest nodal value."""
        i = int(np.argmax(self.values))
        rho, z = self.grid.physical_coordinates()
        return float(rho.ravel()[i]), float(z.ravel()[i])

    @cached_property
    def _spline(self) -> RectBivariateSpline:
        return RectBivariateSpline(self.grid.r, self.grid.theta, self.values, kx=3, ky=3)

    def _decay_amplitude(self) -> RectBivariateSpline | None:
        """Per-angle amplitude ``a(theta)`` of the tail ``a |x|^(1-N)``."""
        g = self.grid
        R = g.r[-1]
        sel = (g.r >= 0.6 * R) & (g.r <= 0.8 * R)
        if sel.sum() < 2:
            sel = (g.r >= 0.5 * R) & (g.r < R)
        w = g.r[sel] ** (1 - g.N)
        amp = (self.values[sel, :] * w[:, None]).sum(axis=0) / (w**2).sum()
        return amp

    def evaluate(self, rho, z, outside: str = "decay") -> np.ndarray:
        """Interpolate at physical points ``(rho, z)``.

        Points below the boundary get 0 (zero extension).  Points beyond the
        truncation radius follow ``outside``: ``"decay"``, ``"zero"``, ``"nan"``
        or ``"raise"``.  On a ``KelvinHalfBall`` grid ``"decay"`` is the exact
        Kelvin reflection.
        """
        rho = np.abs(np.asarray(rho, dtype=float))
        z = np.asarray(z, dtype=float)
        g = self.grid
        zeta = z - g.alpha * rho**2
        r = np.hypot(rho, zeta)
        th = np.arctan2(zeta, rho)
        out = np.zeros(np.broadcast(r, th).shape)
        R = g.r[-1]
        inside = (th >= 0) & (r <= R)
        if np.any(inside):
            out[inside] = self._spline.ev(r[inside], th[inside])
        beyond = (th >= 0) & (r > R)
        if np.any(beyond):
            if outside == "decay" and g.domain.kelvin:
                # u(x) = (R/|x|)^(N-2) u(R^2 x/|x|^2); the chart is flat here
                rb = r[beyond]
                out[beyond] = (R / rb) ** (g.N - 2) * self._spline.ev(R * R / rb, th[beyond])
            elif outside == "decay":
                amp = np.interp(th[beyond], g.theta, self._decay_amplitude())
                out[beyond] = amp * r[beyond] ** (1 - g.N)
            elif outside == "zero":
                pass
            elif outside == "nan":
                out[beyond] = np.nan
            elif outside == "raise":
                raise ChartError("evaluation point beyond the grid")
            else:
                raise ParameterError(f"unknown outside mode {outside!r}")
        return out

    def resample(self, grid: Grid2D, outside: str = "zero") -> "GridFunction":
        """Interpolate onto another grid (physical coordinates)."""
        rho, z = grid.physical_coordinates()
        return GridFunction(grid, self.evaluate(rho, z, outside=outside))


# ---------------------------------------------------------------------------
# Integrals and operators
# ---------------------------------------------------------------------------


def weighted_integral(f: GridFunction, s: float = 0.0, pole: float = 0.0) -> float:
    """``int f / |x - P|^s`` with ``P = (0, pole)`` on the axis.

    ``f`` is integrated as its bilinear interpolant with a 3x3 Gauss rule.
    """
    g = f.grid
    w = g.pole_weight(s, pole)
    return float(w @ (g.interp @ f.flat))


def dirichlet_energy(u: GridFunction) -> float:
    """``int |grad u|^2`` of the bilinear interpolant (no factor 1/2)."""
    v = u.flat
    return float(v @ (u.grid.stiffness @ v))


def polar_derivatives(u: GridFunction) -> dict[str, np.ndarray]:
    """Finite-difference ``U_r, U_rr, U_t, U_tt, U_rt`` at interior nodes.

    Arrays have the full grid shape; entries on the outer rows/columns where
    a centred stencil does not exist are NaN, except the axis column where
    the even reflection ``U(pi/2 + h) = U(pi/2 - h)`` is used.
    """
    g = u.grid
    V = u.values
    (dr1, dr2), (dt1, dt2) = g._fd
    nr, nt = g.shape
    Ur = np.full((nr, nt), np.nan)
    Urr = np.full((nr, nt), np.nan)
    Ut = np.full((nr, nt), np.nan)
    Utt = np.full((nr, nt), np.nan)
    Ur[1:-1] = dr1[:, 0:1] * V[:-2] + dr1[:, 1:2] * V[1:-1] + dr1[:, 2:3] * V[2:]
    Urr[1:-1] = dr2[:, 0:1] * V[:-2] + dr2[:, 1:2] * V[1:-1] + dr2[:, 2:3] * V[2:]
    Ut[:, 1:-1] = dt1[:, 0] * V[:, :-2] + dt1[:, 1] * V[:, 1:-1] + dt1[:, 2] * V[:, 2:]
    Utt[:, 1:-1] = dt2[:, 0] * V[:, :-2] + dt2[:, 1] * V[:, 1:-1] + dt2[:, 2] * V[:, 2:]
    h = g.theta[-1] - g.theta[-2]
    Ut[:, -1] = 0.0
    Utt[:, -1] = 2.0 * (V[:, -2] - V[:, -1]) / h**2
    Urt = np.full((nr, nt), np.nan)
    Urt[1:-1] = dr1[:, 0:1] * Ut[:-2] + dr1[:, 1:2] * Ut[1:-1] + dr1[:, 2:3] * Ut[2:]
    return dict(Ur=Ur, Urr=Urr, Ut=Ut, Utt=Utt, Urt=Urt)


def laplacian(u: GridFunction) -> np.ndarray:
    """Strong-form axisymmetric Laplacian at interior and axis nodes (NaN elsewhere)."""
    g = u.grid
    d = polar_derivatives(u)
    R, T = g._mesh
    N = g.N
    a = g.alpha
    with np.errstate(divide="ignore", invalid="ignore"):
        c, s = np.cos(T), np.sin(T)
        Ur, Ut = d["Ur"], d["Ut"]
        Hrr = d["Urr"]
        Htt = (d["Utt"] + R * Ur) / R**2
        Hrt = (d["Urt"] - Ut / R) / R
        # chart cartesian derivatives
        Urho = c * Ur - s / R * Ut
        Uz = s * Ur + c / R * Ut
        Urr_c = c * c * Hrr - 2 * c * s * Hrt + s * s * Htt
        Uzz_c = s * s * Hrr + 2 * c * s * Hrt + c * c * Htt
        Urz_c = c * s * Hrr + (c * c - s * s) * Hrt - c * s * Htt
        rho = R * c
        u_rho = Urho - 2 * a * rho * Uz
        u_rhorho = Urr_c - 4 * a * rho * Urz_c + 4 * a * a * rho * rho * Uzz_c - 2 * a * Uz
        lap = u_rhorho + (N - 2) / rho * u_rho + Uzz_c
        # axis column: rho = 0, U_rho = 0, u_rho/rho -> u_rhorho
        ax = -1
        Urr_ax = Htt[:, ax]
        Uzz_ax = Hrr[:, ax]
        Uz_ax = Ur[:, ax]
        lap[:, ax] = (N - 1) * (Urr_ax - 2 * a * Uz_ax) + Uzz_ax
    out = np.full(g.shape, np.nan)
    out[1:-1, 1:] = lap[1:-1, 1:]
    return out


def discrete_pde_residual(u: GridFunction, spec) -> GridFunction:
    """Node-wise ``Delta u + sum_i c_i (u^+)^q_i / |x - P_i|^s_i``.

    Zero on the Dirichlet nodes, where no equation is imposed.
    """
    g = u.grid
    lap = laplacian(u)
    rho, z = g.physical_coordinates()
    up = np.maximum(u.values, 0.0)
    res = lap.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        for pole, q in zip(spec.poles, spec.exponents()):
            d = np.hypot(rho, z - pole.z)
            term = pole.coeff * up**q
            if pole.s > 0:
                term = term * d ** (-pole.s)
            res = res + term
    res[g.dirichlet_mask] = 0.0
    return GridFunction(g, res)


def pohozaev_boundary_term(u: GridFunction, reaction: np.ndarray | None = None) -> float:
    """``oint (x . nu) (d_nu u)^2 dsigma`` over the bottom face and outer arc.

    With ``reaction`` (the weak residual ``K u - f`` at every node) the normal
    derivative is recovered variationally by :func:`boundary_flux`; otherwise
    one-sided second-order stencils are used.  The surface measure carries
    ``|S^{N-2}| rho^{N-2}``.  Assumes ``u = 0`` on the boundary.
    """
    if reaction is not None:
        return boundary_flux(u.grid, reaction).pohozaev()
    g = u.grid
    V = u.values
    N = g.N
    a = g.alpha
    area = sphere_area(N - 2)
    # bottom face theta = 0: chart normal derivative -U_zeta = -(1/r) U_theta
    w0, w1, w2 = _one_sided(g.theta[0], g.theta[1], g.theta[2])
    Ut = w0 * V[:, 0] + w1 * V[:, 1] + w2 * V[:, 2]
    r = g.r
    with np.errstate(divide="ignore", invalid="ignore"):
        Uz = np.where(r > 0, Ut / r, 0.0)
    # outer arc r = Rmax
    w0, w1, w2 = _one_sided(r[-1], r[-2], r[-3])
    Ur = w0 * V[-1] + w1 * V[-2] + w2 * V[-3]
    R = r[-1]
    th = g.theta
    c, s = np.cos(th), np.sin(th)
    rho = R * c
    m = np.stack([c - 2 * a * rho * s, s])
    x = np.stack([rho, R * s + a * rho**2])
    xm = (x * m).sum(axis=0)
    m2 = (m * m).sum(axis=0)
    integrand = xm * m2 * Ur**2 * area * rho ** (N - 2) * R
    arc = _trapz(integrand, th)
    bottom = _trapz(a * r**2 * (1 + 4 * a * a * r**2) * Uz**2 * area * r ** (N - 2), r)
    return float(bottom + arc)


@dataclass(frozen=True)
class BoundaryFlux:
    """Normal derivative on the boundary polyline, piecewise linear in its parameter.

    The polyline runs along the bottom face from the origin to the rim and
    then up the outer arc to the axis.  ``param`` holds ``r`` on the face and
    ``theta`` on the arc; ``onArc`` marks the intervals lying on the arc.
    """

    grid: Grid2D
    param: np.ndarray
    onArc: np.ndarray
    values: np.ndarray

    def _segments(self):
        """Gauss points per interval: hat weights, physical point, normal, ``dS``."""
        xg, wg = np.polynomial.legendre.leggauss(4)
        g = self.grid
        a = g.alpha
        R = g.r[-1]
        t0, t1 = self.param[:-1], self.param[1:]
        half = 0.5 * (t1 - t0)
        tq = 0.5 * (t1 + t0)[:, None] + half[:, None] * xg[None, :]
        arc = self.onArc[:, None]
        c, s = np.cos(tq), np.sin(tq)
        rho = np.where(arc, R * c, tq)
        z = np.where(arc, R * s, 0.0) + a * rho**2
        # tangent along increasing parameter
        Tr = np.where(arc, -R * s, 1.0)
        Tz = np.where(arc, R * c - 2 * a * rho * R * s, 2 * a * rho)
        speed = np.hypot(Tr, Tz)
        xnu = (rho * Tz - z * Tr) / speed
        dS = sphere_area(g.N - 2) * rho ** (g.N - 2) * speed * half[:, None] * wg[None, :]
        phi1 = 0.5 * (1 + xg)
        return 1.0 - phi1, phi1, xnu, dS

    def pohozaev(self) -> float:
        h0, h1, xnu, dS = self._segments()
        gq = self.values[:-1, None] * h0 + self.values[1:, None] * h1
        return float(np.sum(xnu * gq**2 * dS))


def boundary_flux(grid: Grid2D, reaction: np.ndarray) -> BoundaryFlux:
    """Recover ``d_nu u`` from the weak residual at the Dirichlet nodes.

    For a discrete solution the residual ``(K u - f)_i`` at a boundary node
    equals ``oint d_nu u phi_i dsigma``; inverting the boundary mass matrix
    gives a normal derivative that converges faster than one-sided stencils.
    """
    res = np.asarray(reaction, dtype=float).reshape(grid.shape)
    bottom = res[:, 0].copy()
    # every (r = 0, theta) node is the origin
    bottom[0] = res[0, :].sum()
    vals = np.concatenate([bottom, res[-1, 1:]])
    param = np.concatenate([grid.r, grid.theta[1:]])
    on_arc = np.concatenate([np.zeros(len(grid.r) - 1, bool), np.ones(len(grid.theta) - 1, bool)])
    flux = BoundaryFlux(grid, param, on_arc, np.zeros_like(vals))
    h0, h1, _, dS = flux._segments()
    n = len(vals)
    diag = np.zeros(n)
    diag[:-1] += np.sum(h0 * h0 * dS, axis=1)
    diag[1:] += np.sum(h1 * h1 * dS, axis=1)
    off = np.sum(h0 * h1 * dS, axis=1)
    M = sp.diags([off, diag, off], [-1, 0, 1], format="csc")
    return BoundaryFlux(grid, param, on_arc, spsolve(M, vals))


def _trapz(y, x) -> float:
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------

_HEADER = "# hslab grid-function v1"
_COLUMNS = "i j r theta rho z value dirichlet"


def save_grid_function(u: GridFunction, path) -> None:
    """Write one row per node: ``i j r theta rho z value dirichlet``.

    Floats use 17 significant digits so the file round-trips exactly.
    """
    g = u.grid
    d = g.domain
    rho, z = g.physical_coordinates()
    I, J = np.meshgrid(np.arange(g.shape[0]), np.arange(g.shape[1]), indexing="ij")
    R, T = g._mesh
    lines = [
        _HEADER,
        f"# kind={d.kind} N={d.N} Rmax={d.Rmax!r} alpha={d.alpha!r} "
        f"r0={(d.graph.r0 if d.graph is not None else d.Rmax)!r} gamma={g.gamma!r} "
        f"nr={g.shape[0]} nt={g.shape[1]}",
        "# " + _COLUMNS,
    ]
    mask = g.dirichlet_mask
    for a, b, rr, tt, pp, zz, vv, mm in zip(
        I.ravel(), J.ravel(), R.ravel(), T.ravel(), rho.ravel(), z.ravel(), u.flat, mask.ravel()
    ):
        lines.append(f"{a} {b} {rr:.17g} {tt:.17g} {pp:.17g} {zz:.17g} {vv:.17g} {int(mm)}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_grid_function(path) -> GridFunction:
    with open(path, encoding="ascii") as fh:
        head = fh.readline().rstrip("\n")
        if head != _HEADER:
            raise ParameterError("not an hslab grid-function file")
        meta = dict(kv.split("=", 1) for kv in fh.readline()[1:].split())
        fh.readline()
        data = np.loadtxt(fh, ndmin=2)
    nr, nt = int(meta["nr"]), int(meta["nt"])
    N = int(meta["N"])
    Rmax = float(meta["Rmax"])
    alpha = float(meta["alpha"])
    if meta["kind"] == "CurvedCap":
        dom = AxisymmetricDomain("CurvedCap", N, Rmax, BoundaryGraph(alpha, float(meta["r0"])))
    else:
        dom = AxisymmetricDomain(meta["kind"], N, Rmax)
    r = data[:, 2].reshape(nr, nt)[:, 0]
    th = data[:, 3].reshape(nr, nt)[0, :]
    grid = Grid2D(dom, r, th, float(meta["gamma"]))
    return GridFunction(grid, data[:, 6].reshape(nr, nt))
