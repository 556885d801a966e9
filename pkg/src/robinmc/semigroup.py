"""Monte Carlo estimators for the Robin semigroup and its gradient.

``P_t^Q f(x) = E^x[f(X_t) exp(int_0^t Q(X_s) dl_s)]`` for the reflecting
diffusion of :mod:`robinmc.stochastics`.  Besides the plain Feynman-Kac
estimator this module provides the Bismut-type gradient estimator, the
right-hand side of the pathwise gradient bound, the smooth interior
approximation of the boundary weight by a Schrodinger potential, and residual
diagnostics (semigroup property, generator limit) that use the PDE reference
for the deterministic parts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import expit

from .drift import DriftField
from .errors import InvalidRadiusError, PreconditionError, SimulationError
from .geometry import DomainModel, HalfLine, Interval, _as_points
from .pde import GridField, RobinHeatOperator
from .stochastics import (
    BoundaryIntegral,
    DampedTransportObserver,
    McEstimate,
    McParams,
    PathObserver,
    TimeIntegral,
    TransportFlags,
    simulate_ensemble,
    time_grid,
)

D0_TOL = 1e-8
BISMUT_FLAGS = TransportFlags(bridge_crossing=True)

Observable = Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# Robin coefficient
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RobinCoefficient:
    """Boundary coefficient ``Q``: one constant per boundary component or a function.

    ``values[i]`` belongs to ``domain.component_names[i]``.  A callable
    ``fn(points) -> values`` may be given instead together with its sup norm.
    """

    values: tuple[float, ...] | None = None
    fn: Callable[[np.ndarray], np.ndarray] | None = None
    fn_sup: float | None = None

    def __post_init__(self):
        if (self.values is None) == (self.fn is None):
            raise ValueError("give either per-component values or a function")
        if self.values is not None and not all(math.isfinite(v) for v in self.values):
            raise ValueError("Q must be finite")
        if self.fn is not None and (self.fn_sup is None or not math.isfinite(self.fn_sup)):
            raise ValueError("a functional Q needs a finite sup norm")

    @classmethod
    def constant(cls, domain: DomainModel, q) -> "RobinCoefficient":
        """``q`` may be a scalar (all components), a sequence, or a dict keyed by component name."""
        names = domain.component_names
        if isinstance(q, dict):
            unknown = set(q) - set(names)
            if unknown:
                raise ValueError(f"unknown boundary components {sorted(unknown)}")
            missing = set(names) - set(q)
            if missing:
                raise ValueError(f"Q undefined on {sorted(missing)}")
            return cls(tuple(float(q[n]) for n in names))
        if np.ndim(q) == 0:
            return cls(tuple(float(q) for _ in names))
        q = tuple(float(v) for v in q)
        if len(q) != len(names):
            raise ValueError(f"expected {len(names)} Q values, got {len(q)}")
        return cls(q)

    @classmethod
    def zero(cls, domain: DomainModel) -> "RobinCoefficient":
        return cls.constant(domain, 0.0)

    @property
    def sup_norm(self) -> float:
        if self.values is not None:
            return max(abs(v) for v in self.values)
        return float(self.fn_sup)

    @property
    def is_zero(self) -> bool:
        return self.values is not None and all(v == 0.0 for v in self.values)

    def __call__(self, points: np.ndarray, component: np.ndarray) -> np.ndarray:
        if self.values is not None:
            return np.asarray(self.values)[np.asarray(component, dtype=int)]
        return np.asarray(self.fn(points), dtype=float)

    def at_component(self, i: int) -> float:
        if self.values is None:
            raise PreconditionError("per-component value requested from a functional Q")
        return self.values[i]


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _evaluate(f: Observable, X: np.ndarray, what: str = "observable") -> np.ndarray:
    vals = np.asarray(f(X), dtype=float)
    if vals.shape[0] != X.shape[0]:
        raise ValueError(f"{what} must return one value per point")
    bad = ~np.all(np.isfinite(vals.reshape(X.shape[0], -1)), axis=1)
    if np.any(bad):
        raise SimulationError(f"{what} is not finite on the visited region", path_index=int(np.flatnonzero(bad)[0]))
    return vals


def _single_point(domain, x) -> np.ndarray:
    X, single = _as_points(x, domain.dim)
    if not single:
        raise ValueError("x must be a single point")
    return X


def _mc_args(mc: McParams) -> dict:
    return {"n_paths": mc.n_paths, "seed": mc.seed, "n_workers": mc.n_workers, "scheme": mc.scheme}


def _exact(value, mc: McParams) -> McEstimate:
    value = np.asarray(value, dtype=float)
    if value.ndim == 0:
        return McEstimate(float(value), 0.0, mc.n_paths, mc.dt, mc.seed)
    return McEstimate(value, np.zeros_like(value), mc.n_paths, mc.dt, mc.seed)


# ---------------------------------------------------------------------------
# Robin semigroup
# ---------------------------------------------------------------------------


def robin_pt_mc(domain: DomainModel, drift: DriftField, f: Observable, Q: RobinCoefficient, x, t: float,
                mc: McParams) -> McEstimate:
    """Feynman-Kac estimate of ``P_t^Q f(x)``.

    The weight picks up ``Q(contact point) * dl`` at every contact step.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    X0 = _single_point(domain, x)
    if t == 0:
        return _exact(_evaluate(f, X0)[0], mc)
    obs = [] if Q.is_zero else [lambda: BoundaryIntegral(Q, "int_Q_dl")]
    ens = simulate_ensemble(domain, drift, x, t, mc.dt, observers=obs, **_mc_args(mc))
    weight = np.exp(ens.extras["int_Q_dl"]) if obs else 1.0
    return ens.estimate(_evaluate(f, ens.x_final) * weight)


def hsu_bound_rhs_mc(domain, drift, grad_f_norm: Observable, kappa1, kappa2, x, t: float,
                     mc: McParams) -> McEstimate:
    """Estimate ``E^x[|grad f|(X_t) exp(int kappa1(X_s) ds + int kappa2(X_s) dl_s)]``.

    ``kappa1`` is a constant or a vectorised function of interior points;
    ``kappa2`` is a constant, a sequence of per-component constants or a
    :class:`RobinCoefficient`.
    """
    X0 = _single_point(domain, x)
    if t == 0:
        return _exact(_evaluate(grad_f_norm, X0)[0], mc)
    k2 = kappa2 if isinstance(kappa2, RobinCoefficient) else RobinCoefficient.constant(domain, kappa2)
    obs: list = []
    k1_const = None
    if callable(kappa1):
        obs.append(lambda: TimeIntegral(lambda X: _evaluate(kappa1, X, "kappa1"), "int_k1"))
    else:
        k1_const = float(kappa1)
        if not math.isfinite(k1_const):
            raise ValueError("kappa1 must be finite")
    if not k2.is_zero:
        obs.append(lambda: BoundaryIntegral(k2, "int_k2"))
    ens = simulate_ensemble(domain, drift, x, t, mc.dt, observers=obs, **_mc_args(mc))
    log_w = np.zeros(ens.n_paths)
    if k1_const is not None:
        log_w += k1_const * t
    else:
        log_w += ens.extras["int_k1"]
    if not k2.is_zero:
        log_w += ens.extras["int_k2"]
    return ens.estimate(_evaluate(grad_f_norm, ens.x_final) * np.exp(log_w))


# ---------------------------------------------------------------------------
# Bismut gradient
# ---------------------------------------------------------------------------


def schedule_function(kind, t: float) -> Callable[[np.ndarray], np.ndarray]:
    """Time schedule ``h`` on ``[0, t]`` with ``h(0) = 0`` and ``h(t) = 1``.

    ``"smoothstep"`` is ``u^2 (3 - 2u)`` with ``u = s/t``, ``"linear"`` is ``u``;
    a callable is used as is after validation.
    """
    if kind == "smoothstep":
        h = lambda s: (np.asarray(s) / t) ** 2 * (3 - 2 * np.asarray(s) / t)
    elif kind == "linear":
        h = lambda s: np.asarray(s) / t
    elif callable(kind):
        h = kind
    else:
        raise ValueError(f"unknown schedule {kind!r}")
    grid = np.linspace(0.0, t, 1025)
    vals = np.asarray(h(grid), dtype=float)
    if abs(vals[0]) > 1e-12 or abs(vals[-1] - 1.0) > 1e-12:
        raise ValueError("schedule must satisfy h(0) = 0 and h(t) = 1")
    if np.any(np.diff(vals) < -1e-12):
        raise ValueError("schedule must be nondecreasing")
    return h


def _bismut_ensemble(domain, drift, f, x, t, mc, schedules, flags):
    """Ensemble plus Bismut weights of shape ``(paths, len(schedules), d)``."""
    if t <= 0:
        raise ValueError("t must be positive")
    n, dt = time_grid(t, mc.dt)
    grid = np.arange(n + 1) * dt
    dh = np.array([np.diff(np.asarray(schedule_function(sch, t)(grid), dtype=float)) for sch in schedules])
    obs = [lambda: DampedTransportObserver(drift, flags, dh, domain=domain)]
    ens = simulate_ensemble(domain, drift, x, t, mc.dt, observers=obs, **_mc_args(mc))
    return ens, ens.extras["bismut_weight"]


def bismut_gradients_mc(domain, drift, f: Observable, x, t: float, mc: McParams,
                        schedules=("smoothstep", "linear"), flags: TransportFlags = BISMUT_FLAGS) -> list[McEstimate]:
    """:func:`bismut_gradient_mc` for several schedules on one shared set of paths."""
    _single_point(domain, x)
    ens, W = _bismut_ensemble(domain, drift, f, x, t, mc, list(schedules), flags)
    fx = _evaluate(f, ens.x_final)
    return [ens.estimate(fx[:, None] * W[:, i] / math.sqrt(2.0)) for i in range(W.shape[1])]


def bismut_gradient_mc(domain, drift, f: Observable, x, t: float, mc: McParams, schedule="smoothstep",
                       flags: TransportFlags = BISMUT_FLAGS) -> McEstimate:
    """Gradient of the Neumann semigroup via ``(1/sqrt 2) E[f(X_t) int h'(s) M_s^T dB_s]``.

    Returns a vector estimate of length ``domain.dim``.
    """
    return bismut_gradients_mc(domain, drift, f, x, t, mc, [schedule], flags)[0]


def bismut_lipschitz_constant(domain, drift, x, t: float, mc: McParams, schedule="smoothstep",
                              flags: TransportFlags = BISMUT_FLAGS) -> McEstimate:
    """``sqrt(E|W|^2 / 2)``: bounds ``|grad P_t f|(x) / ||f||_inf`` by Cauchy-Schwarz.

    The stderr is propagated from the second-moment estimate by the delta method.
    """
    ens, W = _bismut_ensemble(domain, drift, lambda X: np.ones(X.shape[0]), x, t, mc, [schedule], flags)
    W = W[:, 0]
    m2 = ens.estimate(0.5 * np.sum(W * W, axis=1))
    c = math.sqrt(m2.mean)
    return McEstimate(c, m2.stderr / (2 * c) if c > 0 else 0.0, m2.n_paths, m2.dt, m2.seed)


# ---------------------------------------------------------------------------
# Smooth profiles
# ---------------------------------------------------------------------------


_FLAT = 1e-3


def _phase(u):
    return 1.0 / u - 1.0 / (1.0 - u)


def smooth_step(u, order: int = 0):
    """C-infinity step ``S(u) = e^{-1/u} / (e^{-1/u} + e^{-1/(1-u)})`` and its first two derivatives.

    ``S = 0`` for ``u <= 0`` and ``1`` for ``u >= 1``; every derivative vanishes
    at both ends.
    """
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    # within 1e-3 of either end e^{-1/u} underflows, so S is exactly 0 or 1
    # there and the derivatives vanish in double precision
    mid = (u > _FLAT) & (u < 1 - _FLAT)
    if order == 0:
        out[u >= 1 - _FLAT] = 1.0
    if np.any(mid):
        um = u[mid]
        ph = _phase(um)
        s = expit(-ph)
        if order == 0:
            out[mid] = s
        else:
            s1m = expit(ph)  # 1 - s without cancellation
            dph = -1.0 / um**2 - 1.0 / (1.0 - um) ** 2
            ds = -s * s1m * dph
            if order == 1:
                out[mid] = ds
            elif order == 2:
                d2ph = 2.0 / um**3 - 2.0 / (1.0 - um) ** 3
                out[mid] = -ds * (1.0 - 2.0 * s) * dph - s * s1m * d2ph
            else:
                raise ValueError("order must be 0, 1 or 2")
    return out


def bump(s, width: float, order: int = 0):
    """Cutoff ``1 - S(s/width)``: equal to 1 to all orders at 0, supported in ``[0, width]``."""
    s = np.asarray(s, dtype=float)
    if order == 0:
        return 1.0 - smooth_step(s / width)
    return -smooth_step(s / width, order) / width**order


def plateau(s, order: int = 0):
    """``1 - S(s - 1)``: 1 on ``[0, 1]``, 0 beyond 2."""
    s = np.asarray(s, dtype=float)
    if order == 0:
        return 1.0 - smooth_step(s - 1.0)
    return -smooth_step(s - 1.0, order)


def _plateau_primitive_table():
    # int_0^w S(v) dv on [0, 1] by panelwise Gauss-Legendre; the total is 1/2 by symmetry
    w = np.linspace(0.0, 1.0, 2049)
    nodes, weights = np.polynomial.legendre.leggauss(10)
    half = 0.5 * np.diff(w)
    mid = 0.5 * (w[:-1] + w[1:])
    vals = smooth_step(mid[:, None] + half[:, None] * nodes[None, :])
    pieces = half * (vals @ weights)
    return CubicSpline(w, np.concatenate([[0.0], np.cumsum(pieces)]))


_PLATEAU_PRIMITIVE: CubicSpline | None = None


def plateau_primitive(v):
    """``int_0^v plateau``: ``v`` on ``[0, 1]``, ``1.5`` beyond 2."""
    global _PLATEAU_PRIMITIVE
    if _PLATEAU_PRIMITIVE is None:
        _PLATEAU_PRIMITIVE = _plateau_primitive_table()
    v = np.asarray(v, dtype=float)
    w = np.clip(v - 1.0, 0.0, 1.0)
    return np.where(v <= 1.0, v, 1.0 + w - _PLATEAU_PRIMITIVE(w))


# ---------------------------------------------------------------------------
# Schrodinger approximation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SchrodingerExtension:
    """Interior extension ``Q~ = Q * bump(rho)`` and the cutoff distance ``psi_n``.

    ``psi_n(rho) = (1/n) int_0^{n rho} plateau``, so ``psi_n = rho`` for
    ``rho <= 1/n`` and ``psi_n = 1.5/n`` for ``rho >= 2/n``.  The product
    ``F = Q~ psi_n`` has normal derivative ``Q`` on the boundary, and the
    potential ``L F`` replaces the boundary weight by a volume weight.
    """

    domain: DomainModel
    drift: DriftField
    Q: RobinCoefficient
    r: float
    n: float

    def _q(self, X):
        comp = self.domain.nearest_component(X)
        return np.asarray(self.Q.values)[comp]

    def psi_n(self, s, order: int = 0):
        s = np.asarray(s, dtype=float)
        if order == 0:
            return plateau_primitive(self.n * s) / self.n
        if order == 1:
            return plateau(self.n * s)
        return self.n * plateau(self.n * s, 1)

    def profile(self, s, order: int = 0):
        """``phi = bump * psi_n`` as a function of the boundary distance."""
        b0, p0 = bump(s, self.r), self.psi_n(s)
        if order == 0:
            return b0 * p0
        b1, p1 = bump(s, self.r, 1), self.psi_n(s, 1)
        if order == 1:
            return b1 * p0 + b0 * p1
        b2, p2 = bump(s, self.r, 2), self.psi_n(s, 2)
        return b2 * p0 + 2 * b1 * p1 + b0 * p2

    def q_tilde(self, X):
        return self._q(X) * bump(self.domain.rho(X), self.r)

    def product(self, X):
        """``F = Q~ psi_n``."""
        return self._q(X) * self.profile(self.domain.rho(X))

    def grad_product(self, X):
        rho = self.domain.rho(X)
        return (self._q(X) * self.profile(rho, 1))[:, None] * self.domain.grad_rho(X)

    def potential(self, X):
        """``L F = q (phi''(rho) |grad rho|^2 + phi'(rho) L rho)``; zero off the collar."""
        rho = self.domain.rho(X)
        out = np.zeros(X.shape[0])
        inside = rho < self.r
        if np.any(inside):
            Xi, ri = X[inside], rho[inside]
            g = self.domain.grad_rho(Xi)
            lrho = self.domain.laplacian_rho(Xi) + np.sum(self.drift.gradient(Xi) * g, axis=1)
            out[inside] = self._q(Xi) * (self.profile(ri, 2) * np.sum(g * g, axis=1) + self.profile(ri, 1) * lrho)
        return out

    def sup_potential(self, n_grid: int = 20001) -> float:
        """Sup of ``|L F|`` over a dense collar grid (the potential vanishes elsewhere)."""
        s = np.linspace(0.0, self.r, n_grid)
        X = _collar_points(self.domain, s)
        return float(np.max(np.abs(self.potential(X))))

    def invariant_defects(self, h: float = 1e-6) -> dict[str, float]:
        """Measured defects of the defining properties on the boundary and the collar."""
        s = np.linspace(0.0, 3.0 / self.n, 4001)
        psi, dpsi = self.psi_n(s), self.psi_n(s, 1)
        near = s <= 1.0 / self.n
        far = s >= 2.0 / self.n
        B = self.domain.sample_boundary(8)
        Nq = []
        for i in range(B.shape[0]):
            y = B[i : i + 1]
            nrm = self.domain.grad_rho(y)
            q0 = self.q_tilde(y)[0]
            q1 = self.q_tilde(y + h * nrm)[0]
            q2 = self.q_tilde(y + 2 * h * nrm)[0]
            Nq.append(abs((-3 * q0 + 4 * q1 - q2) / (2 * h)))
        comp = self.domain.nearest_component(B)
        return {
            "q_tilde_boundary": float(np.max(np.abs(self.q_tilde(B) - np.asarray(self.Q.values)[comp]))),
            "normal_q_tilde": float(max(Nq)),
            "psi_range": float(max(0.0, -psi.min(), psi.max() - 2.0 / self.n)),
            "psi_equals_rho": float(np.max(np.abs(psi[near] - s[near]))),
            "psi_constant": float(np.ptp(psi[far])),
            "grad_psi_excess": float(max(0.0, np.max(np.abs(dpsi)) - 1.0)),
        }


def _collar_points(domain: DomainModel, s: np.ndarray) -> np.ndarray:
    """Points at boundary distance ``s`` along one inward normal per boundary component."""
    B = domain.sample_boundary(1)
    comps = domain.nearest_component(B)
    pts = []
    for c in np.unique(comps):
        y = B[comps == c][:1]
        pts.append(y + s[:, None] * domain.grad_rho(y))
    return np.concatenate(pts)


def build_schrodinger_extension(domain: DomainModel, drift: DriftField, Q: RobinCoefficient, r: float,
                                n: float) -> SchrodingerExtension:
    """Check the collar radius and mollification index and build the extension."""
    if Q.values is None:
        raise PreconditionError("the extension is built for per-component constant Q")
    if not r > 0 or r > domain.injectivity_radius + 1e-12:
        raise InvalidRadiusError(f"r={r} exceeds the collar radius {domain.injectivity_radius}")
    if n * r < 1 - 1e-12:
        raise ValueError("need n >= 1/r")
    return SchrodingerExtension(domain, drift, Q, float(r), float(n))


class _SchrodingerObserver(PathObserver):
    def __init__(self, ext: SchrodingerExtension, corrected: bool):
        self.ext = ext
        self.corrected = corrected

    def start(self, x0, paths):
        self.pot = np.zeros(x0.shape[0])
        self.mart = np.zeros(x0.shape[0])

    def step(self, s):
        self.pot += self.ext.potential(s.x_prev) * s.dt
        if self.corrected:
            self.mart += math.sqrt(2.0) * np.sum(self.ext.grad_product(s.x_prev) * s.dB, axis=1)

    def finish(self):
        return {"int_potential": self.pot, "martingale": self.mart}


@dataclass(frozen=True)
class SchrodingerComparison:
    raw: McEstimate  # E[f(X_t) exp(-int L F ds)]
    corrected: McEstimate  # raw weight times exp(F(X_t) - F(x) - M_n(t))
    robin: McEstimate  # Feynman-Kac with the boundary weight on the same paths
    raw_residual: float
    corrected_residual: float
    potential_sup: float

    @property
    def combined_stderr(self) -> float:
        return math.hypot(self.raw.stderr, self.robin.stderr)


def schrodinger_pt_mc(f: Observable, ext: SchrodingerExtension, x, t: float, mc: McParams) -> SchrodingerComparison:
    """Estimate the Schrodinger semigroup ``E[f(X_t) exp(-int_0^t L F(X_s) ds)]``.

    The Robin estimate on the same paths and the residuals of the raw and
    corrected estimators are reported alongside.
    """
    domain = ext.domain
    X0 = _single_point(domain, x)
    if t == 0:
        v = _exact(_evaluate(f, X0)[0], mc)
        return SchrodingerComparison(v, v, v, 0.0, 0.0, ext.sup_potential())
    obs = [lambda: _SchrodingerObserver(ext, True)]
    if not ext.Q.is_zero:
        obs.append(lambda: BoundaryIntegral(ext.Q, "int_Q_dl"))
    ens = simulate_ensemble(domain, ext.drift, x, t, mc.dt, observers=obs, **_mc_args(mc))
    fx = _evaluate(f, ens.x_final)
    raw_w = np.exp(-ens.extras["int_potential"])
    corr = ext.product(ens.x_final) - ext.product(X0)[0] - ens.extras["martingale"]
    robin_w = np.exp(ens.extras["int_Q_dl"]) if not ext.Q.is_zero else np.ones(ens.n_paths)
    raw = ens.estimate(fx * raw_w)
    corrected = ens.estimate(fx * raw_w * np.exp(corr))
    robin = ens.estimate(fx * robin_w)
    return SchrodingerComparison(raw, corrected, robin, abs(raw.mean - robin.mean),
                                 abs(corrected.mean - robin.mean), ext.sup_potential())


def schrodinger_pt_pde(f: Callable, ext: SchrodingerExtension, t: float, n_nodes: int = 2001) -> GridField:
    """Deterministic ``P_t^{(n)} f`` on an interval: Neumann problem with killing ``-L F``."""
    dom = ext.domain
    if not isinstance(dom, Interval):
        raise PreconditionError("the PDE variant of the Schrodinger semigroup is implemented on intervals")
    kill = lambda x: -ext.potential(np.asarray(x).reshape(-1, 1))
    op = RobinHeatOperator(0.0, dom.L, n_nodes, ext.drift, 0.0, 0.0, killing=kill)
    u, n, _ = op.evolve(f(op.x), t)
    return op.field(u, t, n)


# ---------------------------------------------------------------------------
# Residual diagnostics
# ---------------------------------------------------------------------------


def interval_operator(domain: Interval, drift: DriftField, Q: RobinCoefficient, n_nodes: int = 801) -> RobinHeatOperator:
    return RobinHeatOperator(0.0, domain.L, n_nodes, drift, Q.at_component(0), Q.at_component(1))


class _SnapshotWeight(PathObserver):
    """Position and accumulated ``int Q dl`` at one step index."""

    def __init__(self, Q: RobinCoefficient, k_snap: int):
        self.Q = Q
        self.k_snap = k_snap

    def start(self, x0, paths):
        self.acc = np.zeros(x0.shape[0])
        self.x_snap = x0.copy()
        self.w_snap = np.zeros(x0.shape[0])

    def step(self, s):
        if np.any(s.contact):
            c = s.contact
            self.acc[c] += self.Q(s.x_new[c], s.projection.component[c]) * s.dl[c]
        if s.k + 1 == self.k_snap:
            self.x_snap = s.x_new.copy()
            self.w_snap = self.acc.copy()

    def finish(self):
        return {"x_snap": self.x_snap, "log_w_snap": self.w_snap, "log_w": self.acc}


def chapman_kolmogorov_residual(domain: Interval, drift: DriftField, f: Callable, Q: RobinCoefficient, x,
                                s: float, t: float, mc: McParams, n_nodes: int = 801) -> McEstimate:
    """Pathwise estimate of ``P_{s+t} f(x) - P_s(P_t f)(x)`` with the inner ``P_t`` from the PDE.

    Both terms use the same paths, so the returned stderr is that of the
    difference.  ``f`` is a function of the coordinate.
    """
    if s < 0 or t < 0:
        raise ValueError("s and t must be nonnegative")
    if s == 0 or t == 0 or (Q.is_zero and _is_constant(f, domain)):
        return _exact(0.0, mc)
    op = interval_operator(domain, drift, Q, n_nodes)
    inner_vals, _, _ = op.evolve(f(op.x), t)
    inner = op.field(inner_vals, t)
    n_total, dt = time_grid(s + t, mc.dt)
    k_snap = int(round(s / dt))
    if abs(k_snap * dt - s) > 1e-9:
        raise ValueError("s must be a multiple of the effective step")
    ens = simulate_ensemble(domain, drift, x, s + t, mc.dt, observers=[lambda: _SnapshotWeight(Q, k_snap)],
                            **_mc_args(mc))
    ex = ens.extras
    full = f(ens.x_final[:, 0]) * np.exp(ex["log_w"])
    nested = inner(ex["x_snap"][:, 0]) * np.exp(ex["log_w_snap"])
    return ens.estimate(full - nested)


def _is_constant(f, domain) -> bool:
    xs = np.linspace(0.0, domain.L, 17)
    v = np.asarray(f(xs), dtype=float)
    return bool(np.ptp(v) == 0.0)


@dataclass(frozen=True)
class D0Function:
    """Twice differentiable function of the interval coordinate with closed-form derivatives."""

    value: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]
    name: str = "f"

    def generator(self, drift: DriftField) -> Callable[[np.ndarray], np.ndarray]:
        """``L f = f'' + V' f'``."""
        return lambda x: self.d2(x) + drift.dpotential_1d(x) * self.d1(x)

    def boundary_defect(self, domain: Interval, Q: RobinCoefficient) -> float:
        """``max |<N, grad f> + Q f|`` over the two end points."""
        L = domain.L
        left = self.d1(np.array([0.0]))[0] + Q.at_component(0) * self.value(np.array([0.0]))[0]
        right = -self.d1(np.array([L]))[0] + Q.at_component(1) * self.value(np.array([L]))[0]
        return float(max(abs(left), abs(right)))


def neumann_cosine(L: float = 1.0, mode: int = 1, shift: float = 0.0) -> D0Function:
    """``shift + cos(mode pi x / L)``: zero derivative at both ends."""
    k = mode * math.pi / L
    return D0Function(lambda x: shift + np.cos(k * np.asarray(x)), lambda x: -k * np.sin(k * np.asarray(x)),
                      lambda x: -k * k * np.cos(k * np.asarray(x)), f"{shift}+cos({mode}pi x/L)")


def flat_end_polynomial(L: float = 1.0, amplitude: float = 1.0) -> D0Function:
    """``1 + amplitude * (x (L - x) / L^2)^4 * 16``: derivatives up to order 3 vanish at both ends."""
    c = 16.0 * amplitude / L**8

    def p(x):
        x = np.asarray(x, dtype=float)
        return x * (L - x)

    def dp(x):
        return L - 2 * np.asarray(x, dtype=float)

    return D0Function(
        lambda x: 1.0 + c * p(x) ** 4,
        lambda x: 4 * c * p(x) ** 3 * dp(x),
        lambda x: c * (12 * p(x) ** 2 * dp(x) ** 2 - 8 * p(x) ** 3),
        f"1+{amplitude}*flat",
    )


def compactly_supported_bump(center: float, half_width: float, height: float = 1.0) -> D0Function:
    """Smooth bump ``height * bump(|x - center|, half_width)``, vanishing near both ends."""

    def parts(x):
        y = np.asarray(x, dtype=float) - center
        return y, np.abs(y), np.sign(y)

    return D0Function(
        lambda x: height * bump(parts(x)[1], half_width),
        lambda x: height * parts(x)[2] * bump(parts(x)[1], half_width, 1),
        lambda x: height * bump(parts(x)[1], half_width, 2),
        f"bump({center},{half_width})",
    )


def robin_corrected(g: D0Function, domain: Interval, Q: RobinCoefficient, eps: float) -> D0Function:
    """Turn a Neumann function ``g`` into a Robin-compatible ``(1 - Q~ h_eps(rho)) g``.

    ``h_eps(s) = s * bump(s, eps)`` and ``Q~`` takes the value of the nearest end.
    Near an end ``f = (1 - q rho) g`` so ``<N, grad f> = -q g`` there.
    """
    L = domain.L
    if not 0 < eps <= L / 2:
        raise ValueError("eps must lie in (0, L/2]")
    q0, q1 = Q.at_component(0), Q.at_component(1)

    def corr(x, order):
        x = np.asarray(x, dtype=float)
        left = x <= L / 2
        s = np.where(left, x, L - x)
        q = np.where(left, q0, q1)
        sign = np.where(left, 1.0, -1.0)  # d rho / dx
        b0, b1, b2 = bump(s, eps), bump(s, eps, 1), bump(s, eps, 2)
        if order == 0:
            return 1.0 - q * s * b0
        if order == 1:
            return -q * (b0 + s * b1) * sign
        return -q * (2 * b1 + s * b2)

    return D0Function(
        lambda x: corr(x, 0) * g.value(x),
        lambda x: corr(x, 1) * g.value(x) + corr(x, 0) * g.d1(x),
        lambda x: corr(x, 2) * g.value(x) + 2 * corr(x, 1) * g.d1(x) + corr(x, 0) * g.d2(x),
        f"robin({g.name})",
    )


def hermite_robin_function(domain: Interval, drift: DriftField, Q: RobinCoefficient) -> D0Function:
    """Quartic ``f`` with ``f(0) = 1`` such that both ``f`` and ``L f`` are Robin compatible.

    ``<N, grad u> + Q u = 0`` holds for ``u = f`` and ``u = L f`` at both ends,
    so ``f`` lies in the domain of ``L^2`` and ``(P_t f - f)/t - L f = O(t)``
    uniformly up to the boundary.  The five coefficients solve a linear system.
    """
    L = domain.L
    ends = [(0.0, 1.0, Q.at_component(0)), (L, -1.0, Q.at_component(1))]
    pw = np.arange(5)

    def basis(x, order):
        # d^order/dx^order of x^k for k = 0..4
        coef = np.ones(len(pw))
        for j in range(order):
            coef *= np.maximum(pw - j, 0)
        return coef * np.where(pw >= order, float(x) ** np.maximum(pw - order, 0), 0.0)

    h = 1e-5
    rows, rhs = [basis(0.0, 0)], [1.0]
    for e, sgn, q in ends:
        v1 = float(drift.dpotential_1d(np.array([e]))[0])
        v2 = float(drift.dpotential_1d(np.array([e + h]))[0] - drift.dpotential_1d(np.array([e - h]))[0]) / (2 * h)
        b0, b1, b2, b3 = (basis(e, k) for k in range(4))
        Lf = b2 + v1 * b1
        dLf = b3 + v2 * b1 + v1 * b2
        rows += [sgn * b1 + q * b0, sgn * dLf + q * Lf]
        rhs += [0.0, 0.0]
    poly = np.polynomial.Polynomial(np.linalg.solve(np.array(rows), np.array(rhs)))
    d1, d2 = poly.deriv(1), poly.deriv(2)
    return D0Function(lambda x: poly(np.asarray(x, dtype=float)), lambda x: d1(np.asarray(x, dtype=float)),
                      lambda x: d2(np.asarray(x, dtype=float)), "hermite_robin")


def require_d0(f: D0Function, domain: Interval, Q: RobinCoefficient, tol: float = D0_TOL) -> None:
    defect = f.boundary_defect(domain, Q)
    if defect > tol:
        raise PreconditionError(f"boundary condition violated: defect {defect:.3e} > {tol:g}", defect=defect)


@dataclass(frozen=True)
class GeneratorResidual:
    x_grid: np.ndarray
    t_ladder: np.ndarray
    residual: np.ndarray  # (n_t, n_x)
    sup_residual: np.ndarray  # (n_t,)
    slope: float


def generator_residual(domain: Interval, drift: DriftField, f: D0Function, Q: RobinCoefficient, x_grid,
                       t_ladder: Sequence[float], n_nodes: int = 1601) -> GeneratorResidual:
    """``|(P_t^Q f - f)/t - L f|`` on ``x_grid`` for each ``t``; ``P_t^Q f`` from the PDE reference.

    The slope is the least-squares fit of ``log sup residual`` against ``log t``.
    """
    require_d0(f, domain, Q)
    x_grid = np.asarray(x_grid, dtype=float)
    ts = np.asarray(sorted(t_ladder), dtype=float)
    op = interval_operator(domain, drift, Q, n_nodes)
    u0 = f.value(op.x)
    # a common step that divides every ladder time
    base = ts[0] / max(1, math.ceil(ts[0] / op.h**2))
    n_steps = int(round(ts[-1] / base))
    _, _, snaps = op.evolve(u0, ts[-1], n_steps, snapshots=list(ts))
    Lf = f.generator(drift)(x_grid)
    fx = f.value(x_grid)
    res = np.array([np.abs((np.interp(x_grid, op.x, u) - fx) / t - Lf) for u, t in zip(snaps, ts)])
    sup = res.max(axis=1)
    if len(ts) < 2:
        slope = float("nan")
    elif np.all(sup > 0):
        slope = float(np.polyfit(np.log(ts), np.log(sup), 1)[0])
    else:
        slope = math.inf  # exact at some t: no decay left to fit
    return GeneratorResidual(x_grid, ts, res, sup, slope)
