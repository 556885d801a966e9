"""Flat model domains, their boundary geometry and the scalar comparison machinery.

Four model domains are supported: the half-line ``[0, inf)``, the interval
``[0, L]``, the ball ``{|x| <= R}`` in dimension 1-3 and the planar annulus
``{r_in <= |x| <= r_out}``.  All of them have closed-form distance to the
boundary, inward normal, nearest-point projection and Laplacian of the distance
function, which is what the reflection scheme and the comparison checks need.

Sign convention for the second fundamental form: ``II(X, X) = -<nabla_X N, X>``
with ``N`` the inward unit normal.  For the ball ``N(x) = -x/|x|`` so that
``II = +1/R`` (convex).  On the inner circle of the annulus ``N(x) = x/|x|`` and
``II = -1/r_in`` (concave), on the outer circle ``II = +1/r_out``.  Hence
``sigma = 1/r_in`` and ``gamma = 1/r_out`` for the annulus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import integrate

from .errors import (
    DegenerateProjectionError,
    DomainError,
    InvalidRadiusError,
    NotOnBoundaryError,
    OutOfCollarError,
)

BOUNDARY_TOL = 1e-9
_DEGENERATE_RADIUS = 1e-300


def _as_points(x, dim: int) -> tuple[np.ndarray, bool]:
    """Return ``x`` as an ``(n, dim)`` float array and whether it was a single point."""
    arr = np.asarray(x, dtype=float)
    if dim == 1 and arr.ndim <= 1:
        single = arr.ndim == 0
        return arr.reshape(-1, 1), single
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise ValueError(f"expected a point of dimension {dim}, got shape {arr.shape}")
        return arr.reshape(1, dim), True
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"expected points of shape (n, {dim}), got {arr.shape}")
    return arr, False


class Projection(NamedTuple):
    """Batch result of projecting trial points onto the domain closure."""

    points: np.ndarray  # (n, d) nearest points of the closure
    depth: np.ndarray  # (n,) distance from trial point to the closure
    normal: np.ndarray  # (n, d) inward normal at the projected point (zero if inside)
    ii: np.ndarray  # (n,) second fundamental form at the projected point
    component: np.ndarray  # (n,) boundary component index, -1 if inside


@dataclass(frozen=True)
class CurvatureData:
    """Constants entering the comparison estimates: ``-sigma <= II <= gamma``, ``Sect <= k``."""

    sigma: float
    gamma: float
    k: float = 0.0
    inj_boundary: float = math.inf

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.sigma, self.gamma, self.k)):
            raise ValueError("curvature constants must be finite")
        if -self.sigma > self.gamma:
            raise ValueError("need -sigma <= gamma")
        if self.k < 0:
            raise ValueError("k must be nonnegative")
        if not self.inj_boundary > 0:
            raise ValueError("injectivity radius of the boundary must be positive")


class DomainModel:
    """Base class for the flat model domains.

    Subclasses implement the vectorised primitives (``rho``, ``grad_rho``,
    ``laplacian_rho``, ``project``); the public single-point operations are
    built on top of them.
    """

    kind: str = "abstract"
    dim: int = 1
    component_names: tuple[str, ...] = ()

    # -- vectorised primitives -------------------------------------------------
    def rho(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_rho(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def laplacian_rho(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def project(self, Y: np.ndarray) -> Projection:
        raise NotImplementedError

    def nearest_component(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def boundary_ii(self, component: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def curvature_data(self) -> CurvatureData:
        raise NotImplementedError

    @property
    def injectivity_radius(self) -> float:
        raise NotImplementedError

    def sample_collar(self, r: float, n: int = 257) -> np.ndarray:
        """Deterministic points covering ``{0 <= rho < r}`` (used for sup estimates)."""
        raise NotImplementedError

    def sample_boundary(self, n: int = 64) -> np.ndarray:
        raise NotImplementedError

    def sample_interior(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    # -- public single-point API --------------------------------------------
    def contains(self, x, tol: float = BOUNDARY_TOL) -> bool:
        X, _ = _as_points(x, self.dim)
        return bool(np.all(self._signed_excess(X) <= tol))

    def _signed_excess(self, X: np.ndarray) -> np.ndarray:
        """Distance outside the closure (<= 0 inside)."""
        return self.project(X).depth

    def dist_to_boundary(self, x):
        """Distance from ``x`` to the boundary; raises :class:`DomainError` outside the closure."""
        X, single = _as_points(x, self.dim)
        if np.any(self._signed_excess(X) > BOUNDARY_TOL):
            raise DomainError(f"point(s) outside the closure of {self!r}")
        r = np.maximum(self.rho(X), 0.0)
        return float(r[0]) if single else r

    def boundary_frame(self, y, tol: float = 1e-9):
        """Inward unit normal and second fundamental form value at a boundary point."""
        Y, single = _as_points(y, self.dim)
        if not single:
            raise ValueError("boundary_frame takes a single point")
        if np.any(self._signed_excess(Y) > tol):
            raise DomainError(f"point {y!r} outside the closure of {self!r}")
        if abs(self.rho(Y)[0]) > tol:
            raise NotOnBoundaryError(f"point {y!r} is not on the boundary (rho={self.rho(Y)[0]:.3g})")
        comp = self.nearest_component(Y)
        normal = self.grad_rho(Y)[0]
        ii = float(self.boundary_ii(comp)[0])
        if self.dim == 1:
            return float(normal[0]), ii
        return normal, ii

    def boundary_component(self, y) -> int:
        Y, _ = _as_points(y, self.dim)
        return int(self.nearest_component(Y)[0])

    def project_with_penetration(self, x):
        """Nearest point of the closure and the penetration depth (0 inside)."""
        X, single = _as_points(x, self.dim)
        proj = self.project(X)
        if single:
            p = proj.points[0]
            return (float(p[0]) if self.dim == 1 else p), float(proj.depth[0])
        return proj.points, proj.depth


@dataclass(frozen=True)
class HalfLine(DomainModel):
    kind: str = field(default="halfline", init=False)
    dim: int = field(default=1, init=False)
    component_names: tuple[str, ...] = field(default=("origin",), init=False)

    def rho(self, X):
        return X[:, 0].copy()

    def grad_rho(self, X):
        return np.ones_like(X)

    def laplacian_rho(self, X):
        return np.zeros(X.shape[0])

    def nearest_component(self, X):
        return np.zeros(X.shape[0], dtype=int)

    def boundary_ii(self, component):
        return np.zeros(np.shape(component))

    def project(self, Y):
        y = Y[:, 0]
        out = y < 0.0
        pts = np.where(out, 0.0, y)[:, None]
        depth = np.where(out, -y, 0.0)
        normal = np.where(out, 1.0, 0.0)[:, None]
        comp = np.where(out, 0, -1)
        return Projection(pts, depth, normal, np.zeros_like(depth), comp)

    def curvature_data(self):
        return CurvatureData(sigma=0.0, gamma=0.0, k=0.0, inj_boundary=math.inf)

    @property
    def injectivity_radius(self):
        return math.inf

    def sample_collar(self, r, n=257):
        return np.linspace(0.0, r, n)[:, None]

    def sample_boundary(self, n=64):
        return np.zeros((1, 1))

    def sample_interior(self, n, rng):
        return rng.exponential(1.0, size=(n, 1))

    def params(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class Interval(DomainModel):
    L: float = 1.0
    kind: str = field(default="interval", init=False)
    dim: int = field(default=1, init=False)
    component_names: tuple[str, ...] = field(default=("left", "right"), init=False)

    def __post_init__(self):
        if not (math.isfinite(self.L) and self.L > 0):
            raise ValueError("Interval length must be positive")

    def rho(self, X):
        x = X[:, 0]
        return np.minimum(x, self.L - x)

    def grad_rho(self, X):
        x = X[:, 0]
        return np.where(x <= 0.5 * self.L, 1.0, -1.0)[:, None]

    def laplacian_rho(self, X):
        return np.zeros(X.shape[0])

    def nearest_component(self, X):
        return np.where(X[:, 0] <= 0.5 * self.L, 0, 1)

    def boundary_ii(self, component):
        return np.zeros(np.shape(component))

    def project(self, Y):
        y = Y[:, 0]
        low = y < 0.0
        high = y > self.L
        pts = np.clip(y, 0.0, self.L)[:, None]
        depth = np.where(low, -y, np.where(high, y - self.L, 0.0))
        normal = np.where(low, 1.0, np.where(high, -1.0, 0.0))[:, None]
        comp = np.where(low, 0, np.where(high, 1, -1))
        return Projection(pts, depth, normal, np.zeros_like(depth), comp)

    def curvature_data(self):
        return CurvatureData(sigma=0.0, gamma=0.0, k=0.0, inj_boundary=self.injectivity_radius)

    @property
    def injectivity_radius(self):
        return 0.5 * self.L

    def sample_collar(self, r, n=257):
        r = min(r, 0.5 * self.L)
        s = np.linspace(0.0, r, n)
        return np.concatenate([s, self.L - s])[:, None]

    def sample_boundary(self, n=64):
        return np.array([[0.0], [self.L]])

    def sample_interior(self, n, rng):
        return rng.uniform(0.0, self.L, size=(n, 1))

    def params(self):
        return {"kind": self.kind, "L": self.L}


def _sphere_directions(dim: int, n: int) -> np.ndarray:
    """Deterministic, roughly uniform unit vectors."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        th = 2.0 * np.pi * (np.arange(n) + 0.5) / n
        return np.column_stack([np.cos(th), np.sin(th)])
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    th = np.pi * (1.0 + 5.0**0.5) * i
    return np.column_stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)])


@dataclass(frozen=True)
class Ball(DomainModel):
    R: float = 1.0
    d: int = 2
    kind: str = field(default="ball", init=False)
    component_names: tuple[str, ...] = field(default=("outer",), init=False)

    def __post_init__(self):
        if not (math.isfinite(self.R) and self.R > 0):
            raise ValueError("Ball radius must be positive")
        if self.d not in (1, 2, 3):
            raise ValueError("Ball dimension must be 1, 2 or 3")

    @property
    def dim(self):  # type: ignore[override]
        return self.d

    def rho(self, X):
        return self.R - np.linalg.norm(X, axis=1)

    def grad_rho(self, X):
        r = np.linalg.norm(X, axis=1)
        return -X / np.where(r > 0, r, np.inf)[:, None]

    def laplacian_rho(self, X):
        r = np.linalg.norm(X, axis=1)
        return -(self.d - 1) / r

    def nearest_component(self, X):
        return np.zeros(X.shape[0], dtype=int)

    def boundary_ii(self, component):
        return np.full(np.shape(component), 1.0 / self.R)

    def project(self, Y):
        r = np.linalg.norm(Y, axis=1)
        out = r > self.R
        scale = np.where(out, self.R / np.where(out, r, 1.0), 1.0)
        pts = Y * scale[:, None]
        depth = np.where(out, r - self.R, 0.0)
        normal = np.where(out[:, None], -pts / self.R, 0.0)
        ii = np.where(out, 1.0 / self.R, 0.0)
        comp = np.where(out, 0, -1)
        return Projection(pts, depth, normal, ii, comp)

    def curvature_data(self):
        return CurvatureData(sigma=0.0, gamma=1.0 / self.R, k=0.0, inj_boundary=self.R)

    @property
    def injectivity_radius(self):
        return self.R

    def sample_collar(self, r, n=129):
        r = min(r, self.R)
        radii = self.R - np.linspace(0.0, r, n, endpoint=False)
        dirs = _sphere_directions(self.d, 32 if self.d == 2 else 64)
        return (radii[:, None, None] * dirs[None, :, :]).reshape(-1, self.d)

    def sample_boundary(self, n=64):
        return self.R * _sphere_directions(self.d, n)

    def sample_interior(self, n, rng):
        g = rng.standard_normal((n, self.d))
        g /= np.linalg.norm(g, axis=1)[:, None]
        rad = self.R * rng.uniform(size=n) ** (1.0 / self.d)
        return g * rad[:, None]

    def params(self):
        return {"kind": self.kind, "R": self.R, "d": self.d}


@dataclass(frozen=True)
class Annulus(DomainModel):
    r_in: float = 0.5
    r_out: float = 1.5
    d: int = 2
    kind: str = field(default="annulus", init=False)
    component_names: tuple[str, ...] = field(default=("inner", "outer"), init=False)

    def __post_init__(self):
        if not (0 < self.r_in < self.r_out and math.isfinite(self.r_out)):
            raise ValueError("Annulus needs 0 < r_in < r_out")
        if self.d != 2:
            raise ValueError("only the planar annulus (d=2) is supported")

    @property
    def dim(self):  # type: ignore[override]
        return self.d

    @property
    def r_mid(self) -> float:
        return 0.5 * (self.r_in + self.r_out)

    def rho(self, X):
        r = np.linalg.norm(X, axis=1)
        return np.minimum(r - self.r_in, self.r_out - r)

    def grad_rho(self, X):
        r = np.linalg.norm(X, axis=1)
        sign = np.where(r <= self.r_mid, 1.0, -1.0)
        return sign[:, None] * X / np.where(r > 0, r, np.inf)[:, None]

    def laplacian_rho(self, X):
        r = np.linalg.norm(X, axis=1)
        return np.where(r <= self.r_mid, 1.0, -1.0) * (self.d - 1) / r

    def nearest_component(self, X):
        r = np.linalg.norm(X, axis=1)
        return np.where(r <= self.r_mid, 0, 1)

    def boundary_ii(self, component):
        component = np.asarray(component)
        return np.where(component == 0, -1.0 / self.r_in, 1.0 / self.r_out)

    def project(self, Y):
        r = np.linalg.norm(Y, axis=1)
        if np.any(r <= _DEGENERATE_RADIUS):
            raise DegenerateProjectionError("projection from the annulus center is not unique")
        low = r < self.r_in
        high = r > self.r_out
        target = np.where(low, self.r_in, np.where(high, self.r_out, r))
        pts = Y * (target / r)[:, None]
        depth = np.where(low, self.r_in - r, np.where(high, r - self.r_out, 0.0))
        unit = Y / r[:, None]
        normal = np.where(low[:, None], unit, np.where(high[:, None], -unit, 0.0))
        ii = np.where(low, -1.0 / self.r_in, np.where(high, 1.0 / self.r_out, 0.0))
        comp = np.where(low, 0, np.where(high, 1, -1))
        return Projection(pts, depth, normal, ii, comp)

    def curvature_data(self):
        return CurvatureData(
            sigma=1.0 / self.r_in, gamma=1.0 / self.r_out, k=0.0, inj_boundary=self.injectivity_radius
        )

    @property
    def injectivity_radius(self):
        # Collars of the two circles meet at the mid radius; the inner-circle
        # value r_in is kept as a conservative cap.
        return min(self.r_in, 0.5 * (self.r_out - self.r_in))

    def sample_collar(self, r, n=129):
        r = min(r, 0.5 * (self.r_out - self.r_in))
        s = np.linspace(0.0, r, n, endpoint=False)
        radii = np.concatenate([self.r_in + s, self.r_out - s])
        dirs = _sphere_directions(2, 32)
        return (radii[:, None, None] * dirs[None, :, :]).reshape(-1, 2)

    def sample_boundary(self, n=64):
        dirs = _sphere_directions(2, n)
        return np.concatenate([self.r_in * dirs, self.r_out * dirs])

    def sample_interior(self, n, rng):
        th = rng.uniform(0, 2 * np.pi, size=n)
        rad = np.sqrt(rng.uniform(self.r_in**2, self.r_out**2, size=n))
        return np.column_stack([rad * np.cos(th), rad * np.sin(th)])

    def params(self):
        return {"kind": self.kind, "r_in": self.r_in, "r_out": self.r_out, "d": self.d}


def make_domain(spec: dict) -> DomainModel:
    """Build a domain from a plain dict, e.g. ``{"kind": "annulus", "r_in": 0.5, "r_out": 1.5}``."""
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "halfline":
        return HalfLine()
    if kind == "interval":
        return Interval(**spec)
    if kind == "ball":
        return Ball(**spec)
    if kind == "annulus":
        return Annulus(**spec)
    raise ValueError(f"unknown domain kind {kind!r}")


def is_radial(domain: DomainModel) -> bool:
    return isinstance(domain, (Ball, Annulus)) and domain.dim >= 2


def dist_to_boundary(domain: DomainModel, x):
    return domain.dist_to_boundary(x)


def boundary_frame(domain: DomainModel, y):
    return domain.boundary_frame(y)


def project_with_penetration(domain: DomainModel, x):
    return domain.project_with_penetration(x)


# ---------------------------------------------------------------------------
# Comparison functions h, alpha, psi and the admissible radius
# ---------------------------------------------------------------------------


def comparison_h(s, k: float, gamma: float):
    """``h(s) = cos(sqrt(k) s) - gamma/sqrt(k) sin(sqrt(k) s)``; ``1 - gamma s`` when ``k = 0``."""
    s = np.asarray(s, dtype=float)
    if k == 0.0:
        return 1.0 - gamma * s
    rk = math.sqrt(k)
    return np.cos(rk * s) - gamma / rk * np.sin(rk * s)


def comparison_dh(s, k: float, gamma: float):
    s = np.asarray(s, dtype=float)
    if k == 0.0:
        return np.full_like(s, -gamma)
    rk = math.sqrt(k)
    return -rk * np.sin(rk * s) - gamma * np.cos(rk * s)


def curvature_radius_cap(k: float, gamma: float) -> float:
    """``arcsin(sqrt(k)/sqrt(k + gamma^2)) / sqrt(k)`` with its ``k -> 0`` limit ``1/|gamma|``."""
    if not (math.isfinite(k) and math.isfinite(gamma)):
        raise ValueError("k and gamma must be finite")
    if k < 0:
        raise ValueError("k must be nonnegative")
    if k == 0.0:
        return math.inf if gamma == 0.0 else 1.0 / abs(gamma)
    rk = math.sqrt(k)
    return math.asin(rk / math.sqrt(k + gamma * gamma)) / rk


def r_admissible(curv: CurvatureData, r0: float) -> float:
    """Largest collar radius allowed in the exponential local-time estimate."""
    if not math.isfinite(r0) or r0 <= 0:
        raise ValueError("r0 must be positive and finite")
    return min(curv.inj_boundary, r0, curvature_radius_cap(curv.k, curv.gamma))


@dataclass(frozen=True)
class ComparisonProfile:
    """Tabulated comparison profile on ``[0, r]``.

    ``psi`` is nondecreasing with ``psi(0) = 0``, ``psi'(0) = 1`` and is
    constant beyond ``r``.  ``g = (h - h(r)) / (1 - h(r))`` is the normalised
    comparison function, which stays finite in the ``gamma -> 0`` limit.
    """

    r: float
    d: int
    k: float
    gamma: float
    alpha: float
    nodes: np.ndarray
    g_table: np.ndarray
    tail_table: np.ndarray  # G(s) = int_s^r g^{d-1}
    dpsi_table: np.ndarray
    psi_table: np.ndarray

    @property
    def psi_prime_at_zero(self) -> float:
        return float(self.dpsi_table[0])

    @property
    def psi_max(self) -> float:
        return float(self.psi_table[-1])

    def h(self, s):
        return comparison_h(s, self.k, self.gamma)

    def dh(self, s):
        return comparison_dh(s, self.k, self.gamma)

    def psi(self, s):
        s = np.asarray(s, dtype=float)
        return np.interp(s, self.nodes, self.psi_table, right=self.psi_table[-1])

    def dpsi(self, s):
        s = np.asarray(s, dtype=float)
        return np.interp(s, self.nodes, self.dpsi_table, right=0.0)

    def d2psi(self, s):
        """Closed form ``psi'' = (1-d) h'/(h - h(r)) psi' - 1/alpha`` on ``[0, r)``, 0 beyond."""
        s = np.asarray(s, dtype=float)
        inside = s < self.r
        out = np.zeros_like(s)
        if self.d == 1:
            out[inside] = -1.0 / self.alpha
            return out
        si = s[inside]
        g = np.interp(si, self.nodes, self.g_table)
        dp = np.interp(si, self.nodes, self.dpsi_table)
        dg = self._dg(si)
        # near s = r both g and psi' vanish linearly; use the limit -1/(d alpha)
        tiny = g < 1e-9
        ratio = np.where(tiny, 0.0, dp / np.where(tiny, 1.0, g))
        val = (1 - self.d) * dg * ratio - 1.0 / self.alpha
        val = np.where(tiny, -1.0 / (self.d * self.alpha), val)
        out[inside] = val
        return out

    def _dg(self, s):
        return _normalised_g(self.k, self.gamma, self.r, derivative=True)(s)


def _normalised_g(k: float, gamma: float, r: float, derivative: bool = False) -> Callable[[np.ndarray], np.ndarray]:
    """``g = (h - h(r)) / (1 - h(r))`` (or ``g'``) written without cancellation.

    Sum-to-product identities turn both differences of ``h`` into products of
    ``sinc`` factors, which stay accurate as ``k -> 0``.  At ``k = 0`` exactly
    the limit ``(r - s)/r`` is used for every ``gamma``.
    """
    if k == 0.0:
        if derivative:
            return lambda s: np.full_like(np.asarray(s, dtype=float), -1.0 / r)
        return lambda s: (r - np.asarray(s, dtype=float)) / r
    a = math.sqrt(k)
    sc = lambda y: np.sinc(a * y / math.pi)  # sin(a y) / (a y)

    def bracket(y):
        # (a sin(a y) + gamma cos(a y)) with the sine written as a^2 y sinc
        return a * a * y * sc(y) + gamma * np.cos(a * y)

    denom = r * sc(r / 2) * bracket(r / 2)  # equals 1 - h(r)
    if gamma == 0.0:
        denom_g0 = r * r * sc(r / 2) ** 2 / 2

        def g0(s):
            s = np.asarray(s, dtype=float)
            if derivative:
                return -s * sc(s) / denom_g0
            return (r - s) * sc((r - s) / 2) * (r + s) * sc((r + s) / 2) / (2 * denom_g0)

        return g0
    if not denom > 0:
        raise InvalidRadiusError("1 - h(r) vanishes; comparison profile undefined")

    def g(s):
        s = np.asarray(s, dtype=float)
        if derivative:
            return -bracket(s) / denom
        return (r - s) * sc((r - s) / 2) * bracket((r + s) / 2) / denom

    return g


def comparison_profile(r: float, k: float, gamma: float, d: int, n_nodes: int = 10_000) -> ComparisonProfile:
    """Build ``h``, ``alpha`` and the tabulated ``psi`` for the local-time estimate.

    ``alpha = int_0^r g(s)^{d-1} ds`` and
    ``psi(s) = alpha^{-1} int_0^{s ^ r} g(t)^{1-d} int_t^r g(u)^{d-1} du dt``.
    """
    if not (math.isfinite(r) and r > 0):
        raise InvalidRadiusError("r must be positive")
    if d < 1:
        raise ValueError("d must be >= 1")
    if k < 0:
        raise ValueError("k must be nonnegative")
    cap = curvature_radius_cap(k, gamma)
    if r > cap * (1 + 1e-12) or float(comparison_h(r, k, gamma)) < -1e-12:
        raise InvalidRadiusError(f"r={r} exceeds the admissible radius {cap}")
    g = _normalised_g(k, gamma, r)
    if d == 1:
        alpha = r
    else:
        alpha, _ = integrate.quad(lambda s: float(g(s)) ** (d - 1), 0.0, r, epsabs=0.0, epsrel=1e-12, limit=200)
    nodes = np.linspace(0.0, r, n_nodes)
    gt = np.clip(g(nodes), 0.0, None)
    gt[-1] = 0.0
    integrand = gt ** (d - 1)
    # tail integral G(s) = int_s^r g^{d-1}, trapezoid from the right
    seg = 0.5 * (integrand[1:] + integrand[:-1]) * np.diff(nodes)
    tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
    # rescale so that G(0) matches the quadrature value of alpha exactly
    if tail[0] > 0:
        tail *= alpha / tail[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        dpsi = np.where(gt > 0, gt ** (1 - d) * tail / alpha, 0.0)
    dpsi[0] = 1.0
    psi = np.concatenate([[0.0], np.cumsum(0.5 * (dpsi[1:] + dpsi[:-1]) * np.diff(nodes))])
    return ComparisonProfile(
        r=r, d=d, k=k, gamma=gamma, alpha=alpha, nodes=nodes, g_table=gt,
        tail_table=tail, dpsi_table=dpsi, psi_table=psi,
    )


class LaplacianCheck(NamedTuple):
    exact: float
    lower_bound: float
    upper_bound: float

    @property
    def holds(self) -> bool:
        tol = 1e-10 * max(1.0, abs(self.exact))
        return self.lower_bound <= self.exact + tol and self.exact <= self.upper_bound + tol


def laplacian_rho_check(domain: DomainModel, drift, x, r: float) -> LaplacianCheck:
    """Compare ``L rho`` at an interior collar point with its comparison bounds.

    Lower bound: ``(d-1) h'/h(rho) - delta_r(Z)``.  Upper bound:
    ``(d-1) sigma + sup_boundary <Z, N> + K rho``.
    """
    X, single = _as_points(x, domain.dim)
    if not single:
        raise ValueError("laplacian_rho_check takes a single point")
    curv = domain.curvature_data()
    rho = float(domain.rho(X)[0])
    if rho < -BOUNDARY_TOL:
        raise DomainError("point outside the domain")
    if not rho < min(r, domain.injectivity_radius):
        raise OutOfCollarError(f"rho={rho:.4g} outside the collar of width {min(r, domain.injectivity_radius):.4g}")
    hval = float(comparison_h(rho, curv.k, curv.gamma))
    if hval <= 0:
        raise OutOfCollarError("comparison function h vanishes before rho")
    d = domain.dim
    exact = float(domain.laplacian_rho(X)[0] + np.sum(drift.gradient(X)[0] * domain.grad_rho(X)[0]))
    lower = (d - 1) * float(comparison_dh(rho, curv.k, curv.gamma)) / hval - drift.delta_r(domain, r)
    upper = (d - 1) * curv.sigma + drift.sup_normal_component(domain) + drift.K * rho
    return LaplacianCheck(exact, lower, upper)
