"""Functional inequalities on one-dimensional (or radial) weighted measures.

Entropy, energy and the quadratic Wasserstein distance are evaluated by
quadrature on a uniform grid.  On top of them sit the exponential local-time
envelope, the integration-by-parts identity of the Robin Dirichlet form, the
symmetry of the Robin semigroup, and the slack of the HWI and semigroup
log-Sobolev inequalities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .drift import DriftField
from .errors import InvalidRadiusError, PreconditionError
from .geometry import Annulus, Ball, DomainModel, Interval
from .pde import RobinHeatOperator, _nodal_derivative
from .semigroup import D0Function, RobinCoefficient, require_d0

INEQUALITY_TOL = 1e-6


# ---------------------------------------------------------------------------
# Measures and functionals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightedMeasure1D:
    """Quadrature for ``mu(dx) = e^{V(x)} dx`` (times ``r^{d-1}`` for radial data) on a grid.

    ``weights`` integrate grid functions against ``mu``; ``boundary_weights``
    are the density of ``mu`` at the two end nodes, i.e. the boundary measure.
    Both are divided by ``normalization`` when ``probability`` is set.
    """

    nodes: np.ndarray
    V: np.ndarray
    weights: np.ndarray
    boundary_weights: np.ndarray
    normalization: float
    radial_dim: int = 1
    probability: bool = True

    @classmethod
    def from_potential(cls, a: float, b: float, n_nodes: int, V=None, radial_dim: int = 1,
                       probability: bool = True, rule: str = "simpson") -> "WeightedMeasure1D":
        """Composite Simpson (odd ``n_nodes``) or trapezoid weights for ``e^V r^{d-1}``."""
        x = np.linspace(a, b, n_nodes)
        Vx = _potential_values(V, x)
        dens = np.exp(Vx) * (x ** (radial_dim - 1) if radial_dim > 1 else 1.0)
        h = (b - a) / (n_nodes - 1)
        if rule == "simpson":
            if n_nodes % 2 == 0:
                raise ValueError("Simpson weights need an odd number of nodes")
            q = np.ones(n_nodes)
            q[1:-1:2] = 4.0
            q[2:-1:2] = 2.0
            q *= h / 3.0
        elif rule == "trapezoid":
            q = np.full(n_nodes, h)
            q[0] = q[-1] = h / 2
        else:
            raise ValueError(f"unknown rule {rule!r}")
        w = q * dens
        bw = dens[[0, -1]].copy()
        Z = float(w.sum()) if probability else 1.0
        return cls(x, Vx, w / Z, bw / Z, Z, radial_dim, probability)

    @classmethod
    def from_operator(cls, op: RobinHeatOperator, V=None, probability: bool = True) -> "WeightedMeasure1D":
        """The diagonal mass matrix of a PDE operator, so that its semigroup is exactly symmetric."""
        x = op.x
        Vx = _potential_values(V, x)
        dens = op.weight(x)
        Z = float(op.mass.sum()) if probability else 1.0
        return cls(x, Vx, op.mass / Z, dens[[0, -1]] / Z, Z, op.radial_dim, probability)

    @property
    def spacing(self) -> float:
        return float(self.nodes[1] - self.nodes[0])

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))

    def density(self) -> np.ndarray:
        """Density of ``mu`` with respect to ``dx`` at the nodes."""
        d = np.exp(self.V) * (self.nodes ** (self.radial_dim - 1) if self.radial_dim > 1 else 1.0)
        return d / self.normalization


def _potential_values(V, x):
    if V is None:
        return np.zeros_like(x)
    if isinstance(V, DriftField):
        return V.potential_1d(x) if V.dim == 1 else V.radial_potential(x)
    if callable(V):
        return np.asarray(V(x), dtype=float) * np.ones_like(x)
    return np.asarray(V, dtype=float)


def _normalized(mu: WeightedMeasure1D, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    m2 = mu.integrate(f * f)
    if not m2 > 0:
        raise ValueError("f vanishes identically")
    return f / math.sqrt(m2)


def entropy_and_energy(mu: WeightedMeasure1D, f, df=None) -> tuple[float, float]:
    """``mu(f^2 log f^2)`` and ``mu(|f'|^2)`` after rescaling to ``mu(f^2) = 1``.

    ``df`` are nodal derivatives; when omitted they come from fourth-order
    finite differences.  ``0 log 0`` counts as 0.
    """
    f = np.asarray(f, dtype=float)
    scale = math.sqrt(mu.integrate(f * f)) if np.any(f) else 0.0
    if scale == 0.0:
        raise ValueError("f vanishes identically")
    g = f / scale
    dg = (_nodal_derivative(f, mu.spacing) if df is None else np.asarray(df, dtype=float)) / scale
    g2 = g * g
    with np.errstate(divide="ignore", invalid="ignore"):
        ent_density = np.where(g2 > 0, g2 * np.log(g2), 0.0)
    return mu.integrate(ent_density), mu.integrate(dg * dg)


def _cdf(nodes: np.ndarray, density: np.ndarray) -> np.ndarray:
    if np.any(density < -1e-14):
        raise ValueError("negative density")
    c = cumulative_trapezoid(np.maximum(density, 0.0), nodes, initial=0.0)
    total = c[-1]
    if not (total > 0 and math.isfinite(total)):
        raise ValueError("density is not normalizable")
    return c / total


def w2_quantile(nodes: np.ndarray, density_a: np.ndarray, density_b: np.ndarray) -> float:
    """``W_2`` between two densities (w.r.t. ``dx``) on a common grid by quantile coupling.

    Each CDF is the piecewise-linear cumulative trapezoid of its density; both
    quantile functions are then piecewise linear in ``u`` and the squared
    difference is integrated exactly on the merged breakpoints.
    """
    Fa, Fb = _cdf(nodes, density_a), _cdf(nodes, density_b)
    u = np.union1d(Fa, Fb)

    def quantile(F):
        # strictly increasing part of F; flat (or subnormal) pieces carry no mass
        keep = np.concatenate([[True], np.diff(F) > np.finfo(float).tiny])
        return np.interp(u, F[keep], nodes[keep])

    d = quantile(Fa) - quantile(Fb)
    du = np.diff(u)
    w2sq = np.sum(du * (d[:-1] ** 2 + d[:-1] * d[1:] + d[1:] ** 2) / 3.0)
    return math.sqrt(max(w2sq, 0.0))


def w2_1d(nu, mu: WeightedMeasure1D, relative: bool = True) -> float:
    """``W_2(nu, mu)`` on the grid of ``mu``.

    ``nu`` is a density at the nodes, relative to ``mu`` (``nu = g mu``) by
    default or relative to ``dx`` when ``relative`` is false.  For radial data
    the distance is that of the radial marginals.
    """
    nu = np.asarray(nu, dtype=float)
    mu_dens = mu.density()
    nu_dens = nu * mu_dens if relative else nu
    return w2_quantile(mu.nodes, nu_dens, mu_dens)


# ---------------------------------------------------------------------------
# Dirichlet form and symmetry
# ---------------------------------------------------------------------------


def dirichlet_form(mu: WeightedMeasure1D, Q: RobinCoefficient, f: D0Function, g: D0Function) -> float:
    """``E(f, g) = mu(f' g') - mu_boundary(Q f g)``."""
    x = mu.nodes
    bulk = mu.integrate(f.d1(x) * g.d1(x))
    ends = x[[0, -1]]
    q = np.array([Q.at_component(0), Q.at_component(1)])
    return bulk - float(np.sum(mu.boundary_weights * q * f.value(ends) * g.value(ends)))


def dirichlet_form_residual(mu: WeightedMeasure1D, Q: RobinCoefficient, f: D0Function, g: D0Function,
                            drift: DriftField, domain: Interval | None = None) -> float:
    """``|E(f, g) + mu(f L g)|`` by quadrature; both functions must satisfy the Robin condition."""
    dom = domain if domain is not None else Interval(float(mu.nodes[-1] - mu.nodes[0]))
    require_d0(f, dom, Q)
    require_d0(g, dom, Q)
    x = mu.nodes
    return abs(dirichlet_form(mu, Q, f, g) + mu.integrate(f.value(x) * g.generator(drift)(x)))


def _require_gradient_drift(drift: DriftField, domain: DomainModel) -> None:
    X = domain.sample_interior(64, np.random.default_rng(0))
    H = drift.hessian(X)
    if not np.allclose(H, np.swapaxes(H, 1, 2)):
        raise PreconditionError("drift is not a gradient field (non-symmetric Jacobian)")


def robin_operator(domain: DomainModel, drift: DriftField, Q: RobinCoefficient, n_nodes: int) -> RobinHeatOperator:
    """PDE operator for an interval or for radial data on a ball or annulus."""
    if isinstance(domain, Interval):
        return RobinHeatOperator(0.0, domain.L, n_nodes, drift, Q.at_component(0), Q.at_component(1))
    if isinstance(domain, Annulus):
        return RobinHeatOperator(domain.r_in, domain.r_out, n_nodes, drift.radial_potential, Q.at_component(0),
                                 Q.at_component(1), radial_dim=domain.dim)
    if isinstance(domain, Ball):
        return RobinHeatOperator(0.0, domain.R, n_nodes, drift.radial_potential, 0.0, Q.at_component(0),
                                 radial_dim=domain.dim)
    raise PreconditionError("a PDE reference exists for intervals and radial data only")


@dataclass(frozen=True)
class SymmetryResult:
    residual: float  # |mu(g P_t f) - mu(f P_t g)|
    lhs: float
    rhs: float
    pde_tolerance: float  # change of mu(g P_t f) under grid refinement


def symmetry_residual(domain: DomainModel, drift: DriftField, f: Callable, g: Callable, Q: RobinCoefficient,
                      t: float, n_nodes: int = 401) -> SymmetryResult:
    """Compare ``mu(g P_t^Q f)`` and ``mu(f P_t^Q g)`` with ``P_t^Q`` from the PDE reference.

    The quadrature uses the mass matrix of the PDE operator.  The PDE
    tolerance is the change of ``mu(g P_t f)`` when the grid is halved.
    """
    _require_gradient_drift(drift, domain)

    def sides(n):
        op = robin_operator(domain, drift, Q, n)
        fx, gx = f(op.x), g(op.x)
        pf, _, _ = op.evolve(fx, t)
        pg, _, _ = op.evolve(gx, t)
        mu = WeightedMeasure1D.from_operator(op)
        return mu.integrate(gx * pf), mu.integrate(fx * pg)

    lhs, rhs = sides(n_nodes)
    coarse, _ = sides((n_nodes - 1) // 2 + 1)
    return SymmetryResult(abs(lhs - rhs), lhs, rhs, abs(lhs - coarse))


# ---------------------------------------------------------------------------
# Local-time envelope
# ---------------------------------------------------------------------------


def local_time_log_bound(lam: float, t: float, r: float, d: int, delta_r: float = 0.0,
                      r_max: float | None = None) -> float:
    """``lam d r / 2 + (lam d / r + lam delta_r + 2 lam^2) t``, the logarithm of :func:`local_time_exp_bound`."""
    if lam < 0 or t < 0:
        raise ValueError("lambda and t must be nonnegative")
    if not r > 0 or (r_max is not None and r > r_max * (1 + 1e-12)):
        raise InvalidRadiusError(f"r={r} is not admissible (max {r_max})")
    return lam * d * r / 2 + (lam * d / r + lam * delta_r + 2 * lam * lam) * t


def local_time_exp_bound(lam: float, t: float, r: float, d: int, delta_r: float = 0.0, r_max: float | None = None) -> float:
    """``exp[lam d r / 2 + (lam d / r + lam delta_r + 2 lam^2) t]``.

    ``r_max`` is the admissible radius (see :func:`robinmc.geometry.r_admissible`);
    a larger ``r`` raises :class:`InvalidRadiusError`.  Overflow gives ``inf``.
    """
    log_b = local_time_log_bound(lam, t, r, d, delta_r, r_max)
    return math.exp(log_b) if log_b < 709.0 else math.inf


lemma22_bound = local_time_exp_bound


def optimize_bound_radius(lam: float, t: float, d: int, r_max: float, delta: Callable[[float], float] | float = 0.0,
                            n_grid: int = 400, r_cap: float = 50.0) -> tuple[float, float]:
    """Minimise the bound over a geometric ``r`` grid in ``(0, min(r_max, r_cap)]``; returns ``(bound, r)``."""
    hi = min(r_max, r_cap)
    rs = np.geomspace(hi * 1e-3, hi, n_grid)
    dfn = delta if callable(delta) else (lambda r, c=float(delta): c)
    logs = [local_time_log_bound(lam, t, r, d, dfn(r)) for r in rs]
    i = int(np.argmin(logs))
    return math.exp(logs[i]), float(rs[i])


def eta_envelope(lam: float, times: Sequence[float], d: int, r_max: float, delta=0.0, n_grid: int = 400) -> np.ndarray:
    """Closed-form upper envelope of ``sup_x E^x e^{lam l_s}`` on a time table (pointwise min over ``r``)."""
    return np.array([optimize_bound_radius(lam, s, d, r_max, delta, n_grid)[0] for s in times])


# ---------------------------------------------------------------------------
# HWI and log-Sobolev
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlackReport:
    inequality: str
    lhs: float
    rhs: float
    slack: float
    entropy: float
    energy: float
    w2: float
    t_opt: float | None = None

    @property
    def holds(self) -> bool:
        return self.slack >= -INEQUALITY_TOL


def _trapz(y, x) -> float:
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def theorem_rhs(energy: float, w2: float, K: float, times: np.ndarray, eta: np.ndarray) -> tuple[float, float]:
    """Minimum over the table end points ``t`` of ``4 A(t) I + W^2 / (4 B(t))``.

    ``A(t) = int_0^t e^{2Ks} eta`` and ``B(t) = int_0^t e^{-2Ks} / eta`` by the
    trapezoid rule on the table.  Returns ``(rhs, t)``.
    """
    times = np.asarray(times, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if times[0] != 0.0:
        raise ValueError("the eta table must start at s = 0")
    A = cumulative_trapezoid(np.exp(2 * K * times) * eta, times, initial=0.0)
    B = cumulative_trapezoid(np.exp(-2 * K * times) / eta, times, initial=0.0)
    with np.errstate(divide="ignore"):
        rhs = 4 * A[1:] * energy + w2 * w2 / (4 * B[1:])
    i = int(np.argmin(rhs))
    return float(rhs[i]), float(times[i + 1])


def corollary_rhs(energy: float, w2: float, K: float, sigma: float, d: int, r: float, delta_r: float) -> float:
    """``2 e^{2 sigma d/r} sqrt(I) W + K_r e^{2 sigma d/r} W^2 / 2`` with ``K_r = K + sigma d/r + sigma delta_r + 4 sigma^2``."""
    c = math.exp(2 * sigma * d / r)
    Kr = K + sigma * d / r + sigma * delta_r + 4 * sigma * sigma
    return 2 * c * math.sqrt(energy) * w2 + Kr * c * w2 * w2 / 2


def convex_hwi_rhs(energy: float, w2: float, K: float) -> float:
    """``2 sqrt(I) W + K W^2 / 2``."""
    return 2 * math.sqrt(energy) * w2 + K * w2 * w2 / 2


def convex_optimal_time(energy: float, w2: float, K: float) -> float:
    """Time at which the theorem form with ``eta = 1`` attains :func:`convex_hwi_rhs`.

    With ``a = (e^{2Kt} - 1)/K`` the bound is ``2aI + W^2/(2a) + K W^2/2``,
    minimised at ``a = W / (2 sqrt I)``.
    """
    a = w2 / (2 * math.sqrt(energy))
    if K == 0:
        return a / 2
    if 1 + K * a <= 0:
        return math.inf
    return math.log1p(K * a) / (2 * K)


def hwi_slack(mu: WeightedMeasure1D, f, mode: str, *, K: float, df=None, eta_table=None, sigma: float = 0.0,
              d: int = 1, r: float | None = None, delta_r: float = 0.0) -> SlackReport:
    """Slack ``RHS - LHS`` of the HWI inequality for ``f^2 mu`` (``f`` at the nodes).

    ``mode="theorem"`` needs ``eta_table = (times, eta)`` for ``eta_{2 sigma}``;
    ``mode="corollary"`` needs ``r``, ``sigma``, ``d`` and ``delta_r``.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    H, I = entropy_and_energy(mu, f, df)
    g = _normalized(mu, f)
    W = w2_1d(g * g, mu)
    if mode == "theorem":
        if eta_table is None:
            raise ValueError("theorem mode needs an eta table")
        rhs, t_opt = theorem_rhs(I, W, K, *eta_table)
        return SlackReport("hwi_theorem", H, rhs, rhs - H, H, I, W, t_opt)
    if mode == "corollary":
        if r is None:
            raise ValueError("corollary mode needs r")
        rhs = corollary_rhs(I, W, K, sigma, d, r, delta_r)
        return SlackReport("hwi_corollary", H, rhs, rhs - H, H, I, W)
    raise ValueError(f"unknown mode {mode!r}")


def log_sobolev_slack(domain: DomainModel, drift: DriftField, f: Callable, t: float, K: float, eta_table,
                      n_nodes: int = 401) -> SlackReport:
    """Slack of ``mu(f^2 log f^2) <= mu(P_t f^2 log P_t f^2) + 4 mu(|f'|^2) int_0^t e^{2Ks} eta``.

    ``P_t`` is the Neumann semigroup from the PDE reference and ``eta_table``
    must cover ``[0, t]``.
    """
    op = robin_operator(domain, drift, RobinCoefficient.zero(domain), n_nodes)
    mu = WeightedMeasure1D.from_operator(op)
    fx = f(op.x)
    H, I = entropy_and_energy(mu, fx)
    g = _normalized(mu, fx)
    pt, _, _ = op.evolve(g * g, t)
    ent_pt = mu.integrate(np.where(pt > 0, pt * np.log(np.where(pt > 0, pt, 1.0)), 0.0))
    times, eta = (np.asarray(a, dtype=float) for a in eta_table)
    keep = times <= t * (1 + 1e-12)
    if abs(times[keep][-1] - t) > 1e-9 * max(1.0, t):
        raise ValueError("eta table must contain t")
    A = _trapz(np.exp(2 * K * times[keep]) * eta[keep], times[keep])
    rhs = ent_pt + 4 * I * A
    return SlackReport("log_sobolev", H, rhs, rhs - H, H, I, float("nan"), t)


def optimal_schedule_coefficient(K: float, times, eta) -> tuple[float, float]:
    """Check the optimal time schedule on a table.

    With ``h_s = int_s^t e^{-2Ku}/eta du / D`` and ``D = int_0^t e^{-2Ku}/eta du``,
    the transport term ``(1/4) int_0^t h'(s)^2 e^{2Ks} eta(s) ds`` should equal
    ``1/(4D)``.  Both numbers are returned, each integral by the trapezoid rule
    with ``h'`` taken exactly from the integrand.
    """
    times = np.asarray(times, dtype=float)
    eta = np.asarray(eta, dtype=float)
    integrand = np.exp(-2 * K * times) / eta
    D = _trapz(integrand, times)
    hdot = -integrand / D
    coeff = 0.25 * _trapz(hdot**2 * np.exp(2 * K * times) * eta, times)
    return coeff, 1.0 / (4 * D)


log_sobolev_34_slack = log_sobolev_slack
