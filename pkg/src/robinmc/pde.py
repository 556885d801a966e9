"""Finite-volume reference solver for the Robin heat equation in one coordinate.

The generator ``L u = u'' + V' u'`` on an interval (or ``u'' + ((d-1)/r + V') u'``
for radial data) is written in divergence form ``L u = w^{-1} (w u')'`` with the
weight ``w = e^V`` (times ``r^{d-1}`` in the radial case).  Each node owns a
control volume; the two end nodes own half cells whose outer flux is fixed by
the Robin condition ``<N, grad u> + Q u = 0``.  With a constant weight the
half-cell rows coincide with the usual second-order ghost-node closure.

The semi-discrete operator is ``M^{-1} S`` with a diagonal mass matrix ``M`` and
a symmetric tridiagonal ``S``, so it is self-adjoint in the discrete weighted
inner product.  Time stepping is Crank-Nicolson.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.sparse import diags
from scipy.sparse.linalg import splu

from .drift import DriftField
from .errors import StabilityError
from .geometry import Annulus, Ball

_BLOWUP = 1e100


def _potential_fn(V) -> Callable[[np.ndarray], np.ndarray]:
    if V is None:
        return lambda x: np.zeros_like(np.asarray(x, dtype=float))
    if isinstance(V, DriftField):
        return V.potential_1d
    return lambda x: np.asarray(V(np.asarray(x, dtype=float)), dtype=float) * np.ones_like(x)


@dataclass(frozen=True)
class GridField:
    """Solution snapshot on a uniform 1D grid (spatial or radial coordinate)."""

    nodes: np.ndarray
    values: np.ndarray
    time: float
    spacing: float
    n_steps: int = 0
    dt: float = 0.0
    geometry: str = "interval"
    mass: np.ndarray | None = field(default=None, repr=False)

    def __call__(self, x):
        """Linear interpolation of the nodal values."""
        x = np.asarray(x, dtype=float)
        if np.any(x < self.nodes[0] - 1e-12) or np.any(x > self.nodes[-1] + 1e-12):
            raise ValueError("evaluation point outside the grid span")
        return np.interp(x, self.nodes, self.values)

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "value"])
        for x, v in zip(self.nodes, self.values):
            w.writerow([format(float(x), ".17g"), format(float(v), ".17g")])


class RobinHeatOperator:
    """Discrete ``L + c`` with Robin end conditions on a uniform grid.

    Parameters
    ----------
    a, b : float
        Grid ends.  For radial problems ``a`` is ``0`` (ball) or the inner radius.
    n_nodes : int
        Number of nodes including both ends.
    potential : callable
        ``V`` as a function of the coordinate.
    q_left, q_right : float
        Robin coefficients at the ends.  The inward normal is ``+d/dx`` at the
        left end and ``-d/dx`` at the right end, so the conditions read
        ``u'(a) = -q_left u(a)`` and ``u'(b) = q_right u(b)``.
    radial_dim : int
        ``1`` for a plain interval, ``d`` for radial data in dimension ``d``.
    killing : callable, optional
        Extra zeroth-order term ``c(x)``: the operator becomes ``L u + c u``.
    """

    def __init__(self, a: float, b: float, n_nodes: int, potential=None, q_left: float = 0.0,
                 q_right: float = 0.0, radial_dim: int = 1, killing=None):
        if n_nodes < 16:
            raise ValueError("n_nodes must be >= 16")
        if not b > a:
            raise ValueError("need b > a")
        self.a, self.b = float(a), float(b)
        self.n = n_nodes
        self.x = np.linspace(a, b, n_nodes)
        self.h = h = (b - a) / (n_nodes - 1)
        self.radial_dim = radial_dim
        self.q_left, self.q_right = float(q_left), float(q_right)
        Vf = _potential_fn(potential)

        def weight(s):
            s = np.asarray(s, dtype=float)
            return np.exp(Vf(s)) * s ** (radial_dim - 1) if radial_dim > 1 else np.exp(Vf(s))

        self.weight = weight
        w_nodes = weight(self.x)
        w_half = weight(0.5 * (self.x[1:] + self.x[:-1]))
        mass = w_nodes * h
        mass[0] = mass[-1] = 0.5 * h
        mass[0] *= w_nodes[0]
        mass[-1] *= w_nodes[-1]
        if radial_dim > 1 and self.a == 0.0:
            # origin cell is the ball of radius h/2 (per unit sphere measure)
            mass[0] = math.exp(float(Vf(np.array([0.0]))[0])) * (0.5 * h) ** radial_dim / radial_dim
        self.mass = mass
        cond = w_half / h
        main = np.zeros(n_nodes)
        main[:-1] -= cond
        main[1:] -= cond
        main[0] += w_nodes[0] * self.q_left
        main[-1] += w_nodes[-1] * self.q_right
        if killing is not None:
            main += mass * np.asarray(killing(self.x), dtype=float)
        self.stiff_main = main
        self.stiff_off = cond
        self.S = diags([cond, main, cond], [-1, 0, 1], format="csc")

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Discrete generator ``M^{-1} S u``."""
        return (self.S @ u) / self.mass

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        """Discrete weighted inner product ``sum m_i u_i v_i``."""
        return float(np.sum(self.mass * u * v))

    def evolve(self, u0: np.ndarray, t: float, n_steps: int | None = None,
               snapshots: Sequence[float] = ()) -> tuple[np.ndarray, int, list[np.ndarray]]:
        """Crank-Nicolson from ``u0`` to time ``t``; optional intermediate snapshots.

        Snapshot times must be multiples of the step.  Returns the final values,
        the step count and the snapshot list.
        """
        u = np.asarray(u0, dtype=float).copy()
        if t == 0:
            return u, 0, [u.copy() for _ in snapshots]
        if n_steps is None:
            n_steps = max(1, math.ceil(t / self.h**2 - 1e-9))
        dt = t / n_steps
        snap_idx = {}
        for j, s in enumerate(snapshots):
            k = int(round(s / dt))
            if abs(k * dt - s) > 1e-9 * max(1.0, s):
                raise ValueError("snapshot times must be multiples of the time step")
            snap_idx.setdefault(k, []).append(j)
        out: list = [None] * len(snapshots)
        for j in snap_idx.get(0, []):
            out[j] = u.copy()
        M = diags(self.mass, format="csc")
        lhs = splu((M - 0.5 * dt * self.S).tocsc())
        rhs = (M + 0.5 * dt * self.S).tocsr()
        for k in range(1, n_steps + 1):
            u = lhs.solve(rhs @ u)
            if k in snap_idx:
                for j in snap_idx[k]:
                    out[j] = u.copy()
            if k % 256 == 0 or k == n_steps:
                if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > _BLOWUP:
                    raise StabilityError(f"solution blew up at step {k}; reduce the time step")
        return u, n_steps, out

    def field(self, values: np.ndarray, t: float, n_steps: int = 0, geometry: str = "interval") -> GridField:
        return GridField(self.x.copy(), values, t, self.h, n_steps, t / n_steps if n_steps else 0.0,
                         geometry, self.mass.copy())


def solve_robin_heat_1d(V, Q: tuple[float, float], f0, L: float, n_nodes: int, t: float,
                        n_steps: int | None = None, killing=None) -> GridField:
    """Solve ``u_t = u'' + V' u'`` on ``[0, L]`` with Robin ends ``Q = (q_0, q_L)``.

    ``f0`` is a callable of the coordinate or an array of nodal values.  The
    default time step is the square of the node spacing.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    op = RobinHeatOperator(0.0, L, n_nodes, V, Q[0], Q[1], killing=killing)
    u0 = f0(op.x) if callable(f0) else np.asarray(f0, dtype=float)
    u, n, _ = op.evolve(u0, t, n_steps)
    return op.field(u, t, n)


def halfline_truncation(x_max_eval: float, t: float, drift_speed: float = 0.0) -> float:
    """Truncation point ``x + 8 sqrt(2t)`` plus a drift allowance ``t * |Z|``."""
    return x_max_eval + 8.0 * math.sqrt(2.0 * t) + t * abs(drift_speed)


def solve_robin_heat_halfline(V, q: float, f0, x_eval_max: float, t: float, n_nodes: int = 2001,
                              n_steps: int | None = None, truncation_factor: float = 1.0,
                              drift_speed: float = 0.0) -> GridField:
    """Half-line problem truncated with a Neumann far end (see :func:`halfline_truncation`)."""
    L = truncation_factor * halfline_truncation(x_eval_max, t, drift_speed)
    op = RobinHeatOperator(0.0, L, n_nodes, V, q, 0.0)
    u0 = f0(op.x)
    u, n, _ = op.evolve(u0, t, n_steps)
    return op.field(u, t, n, geometry="halfline")


def radial_operator(domain, V, Q: Sequence[float] | float, n_nodes: int, killing=None) -> RobinHeatOperator:
    """Radial operator for a ball (``Q`` scalar) or annulus (``Q = (q_inner, q_outer)``).

    On the annulus the inner circle has inward normal ``+d/dr``; on both the
    outer circles it is ``-d/dr``.  The ball origin carries no flux.
    """
    if isinstance(V, DriftField):
        Vr = V.radial_potential
    else:
        Vr = V
    if isinstance(domain, Ball):
        q = float(np.atleast_1d(Q)[0])
        return RobinHeatOperator(0.0, domain.R, n_nodes, Vr, 0.0, q, radial_dim=domain.dim, killing=killing)
    if isinstance(domain, Annulus):
        qi, qo = (float(Q), float(Q)) if np.ndim(Q) == 0 else (float(Q[0]), float(Q[1]))
        return RobinHeatOperator(domain.r_in, domain.r_out, n_nodes, Vr, qi, qo, radial_dim=domain.dim,
                                 killing=killing)
    raise TypeError("radial solver needs a Ball or an Annulus")


def solve_robin_heat_radial(domain, V, Q, f0, n_nodes: int, t: float, n_steps: int | None = None) -> GridField:
    """Radially symmetric solve on a ball or annulus; ``f0`` is a function of the radius."""
    if not t > 0:
        raise ValueError("t must be positive")
    op = radial_operator(domain, V, Q, n_nodes)
    u0 = f0(op.x) if callable(f0) else np.asarray(f0, dtype=float)
    u, n, _ = op.evolve(u0, t, n_steps)
    return op.field(u, t, n, geometry="radial")


def _nodal_derivative(u: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order central differences inside, third-order one-sided near the ends."""
    n = len(u)
    if n < 5:
        raise ValueError("need at least 5 nodes")
    du = np.empty(n)
    du[2:-2] = (u[:-4] - 8 * u[1:-3] + 8 * u[3:-1] - u[4:]) / (12 * h)
    du[0] = (-11 * u[0] + 18 * u[1] - 9 * u[2] + 2 * u[3]) / (6 * h)
    du[1] = (-2 * u[0] - 3 * u[1] + 6 * u[2] - u[3]) / (6 * h)
    du[-1] = (11 * u[-1] - 18 * u[-2] + 9 * u[-3] - 2 * u[-4]) / (6 * h)
    du[-2] = (2 * u[-1] + 3 * u[-2] - 6 * u[-3] + u[-4]) / (6 * h)
    return du


def field_gradient(fld: GridField, x):
    """Derivative of a grid field at ``x`` (nodal stencils, linear interpolation between nodes)."""
    x = np.asarray(x, dtype=float)
    lo, hi = fld.nodes[0], fld.nodes[-1]
    if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
        raise ValueError("x outside the grid span")
    du = _nodal_derivative(fld.values, fld.spacing)
    out = np.interp(x, fld.nodes, du)
    return float(out) if out.ndim == 0 else out


def observed_order(coarse: float, mid: float, fine: float) -> float:
    """Order ``log2(|coarse - mid| / |mid - fine|)`` from three resolutions in ratio 2."""
    return math.log2(abs(coarse - mid) / abs(mid - fine))


def richardson_ladder(solve: Callable[[int], GridField], base_nodes: int, x_eval, levels: int = 3):
    """Self-convergence study: solve with ``base_nodes`` refined ``levels`` times by 2.

    ``solve(n_nodes)`` must use grids sharing the evaluation points.  Returns the
    values per level (rows) at ``x_eval`` and the observed orders at each point
    from every consecutive triple.
    """
    x_eval = np.atleast_1d(np.asarray(x_eval, dtype=float))
    vals = []
    n = base_nodes
    for _ in range(levels):
        vals.append(solve(n)(x_eval))
        n = 2 * (n - 1) + 1
    vals = np.array(vals)
    diffs = np.abs(np.diff(vals, axis=0))
    orders = np.log2(np.max(diffs[:-1], axis=1) / np.max(diffs[1:], axis=1))
    return vals, orders
