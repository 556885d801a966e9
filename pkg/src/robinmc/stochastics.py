"""Reflecting diffusions with boundary local time and the damped transport functional.

The process solves ``dX = sqrt(2) dB + Z(X) dt + N(X) dl`` in a flat model
domain.  One step of the scheme is an Euler-Maruyama free move followed by the
nearest-point projection back onto the closure; the penetration depth is the
local-time increment.  On the half-line the running-maximum Skorokhod map is
available as an alternative with identical input.

Ensembles are simulated in blocks of paths.  Path ``i`` draws its Brownian
increments from the counter-based stream ``(seed, i)`` so results do not depend
on block size or on the number of worker threads.  Path functionals are
accumulated on the fly by *observers* so that large ensembles never store
whole trajectories.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from . import rng
from .drift import DriftField
from .errors import DegenerateProjectionError, DomainError, PreconditionError, SimulationError
from .geometry import BOUNDARY_TOL, ComparisonProfile, DomainModel, HalfLine, Projection, _as_points

SQRT2 = math.sqrt(2.0)
_BLOCK_PATHS = 4096
_STEP_CHUNK = 256  # steps of normals held in memory per block


@dataclass(frozen=True)
class McParams:
    """Monte Carlo controls shared by every estimator."""

    n_paths: int = 10_000
    dt: float = 1e-3
    seed: int = 0
    n_workers: int = 1
    scheme: str = "projection"

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.scheme not in ("projection", "skorokhod"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    def with_(self, **kw) -> "McParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class McEstimate:
    """Sample mean with standard error ``std(ddof=1) / sqrt(n_paths)``."""

    mean: float | np.ndarray
    stderr: float | np.ndarray
    n_paths: int
    dt: float
    seed: int

    @classmethod
    def from_samples(cls, samples: np.ndarray, dt: float, seed: int) -> "McEstimate":
        samples = np.asarray(samples, dtype=float)
        n = samples.shape[0]
        mean = np.mean(samples, axis=0)
        if n > 1:
            stderr = np.std(samples, axis=0, ddof=1) / math.sqrt(n)
        else:
            stderr = np.zeros_like(mean)
        if np.ndim(mean) == 0:
            mean, stderr = float(mean), float(stderr)
        return cls(mean, stderr, n, dt, seed)

    def within(self, target, n_sigma: float = 3.0, slack: float = 0.0) -> bool:
        return bool(np.all(np.abs(np.asarray(self.mean) - target) <= n_sigma * np.asarray(self.stderr) + slack))


def time_grid(t: float, dt: float) -> tuple[int, float]:
    """Number of steps and the effective step so that ``n * dt_eff == t``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return 0, dt
    if dt > t * (1 + 1e-12):
        raise ValueError("need dt <= t")
    n = max(1, int(math.ceil(t / dt - 1e-9)))
    return n, t / n


# ---------------------------------------------------------------------------
# Observers
# ---------------------------------------------------------------------------


@dataclass
class StepData:
    """Everything an observer sees for one step of a block of paths."""

    k: int
    t: float  # time at the start of the step
    dt: float
    x_prev: np.ndarray  # (b, d)
    x_new: np.ndarray  # (b, d)
    dB: np.ndarray  # (b, d) Brownian increments
    dl: np.ndarray  # (b,) local time increments
    l_new: np.ndarray  # (b,) cumulative local time after the step
    contact: np.ndarray  # (b,) bool
    projection: Projection


class PathObserver:
    """Accumulates a path functional over one block; see :func:`simulate_ensemble`."""

    def start(self, x0: np.ndarray, paths: np.ndarray) -> None:
        self.n = x0.shape[0]

    def step(self, s: StepData) -> None:  # pragma: no cover - interface
        pass

    def finish(self) -> dict[str, np.ndarray]:
        return {}


class PathRecorder(PathObserver):
    """Stores full trajectories (small ensembles only)."""

    def start(self, x0, paths):
        self.states = [x0.copy()]
        self.lt = [np.zeros(x0.shape[0])]
        self.incs = []
        self.contacts = []

    def step(self, s):
        self.states.append(s.x_new.copy())
        self.lt.append(s.l_new.copy())
        self.incs.append(s.dB.copy())
        self.contacts.append(s.contact.copy())

    def finish(self):
        b = self.states[0].shape[0]
        d = self.states[0].shape[1]
        incs = np.stack(self.incs, axis=1) if self.incs else np.zeros((b, 0, d))
        contacts = np.stack(self.contacts, axis=1) if self.contacts else np.zeros((b, 0), dtype=bool)
        return {
            "states": np.stack(self.states, axis=1),
            "local_time_path": np.stack(self.lt, axis=1),
            "increments": incs,
            "contacts": contacts,
        }


class LocalTimeLadder(PathObserver):
    """Local time at a set of step indices (a coupled time ladder)."""

    def __init__(self, step_indices: Sequence[int]):
        self.idx = np.asarray(step_indices, dtype=int)

    def start(self, x0, paths):
        self.out = np.zeros((x0.shape[0], len(self.idx)))
        self._zero = self.idx == 0

    def step(self, s):
        hit = self.idx == s.k + 1
        if np.any(hit):
            self.out[:, hit] = s.l_new[:, None]

    def finish(self):
        return {"local_time_ladder": self.out}


class TimeIntegral(PathObserver):
    """Left-point Riemann sum of ``int_0^t c(X_s) ds`` for a vectorised ``c``."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], key: str):
        self.fn = fn
        self.key = key

    def start(self, x0, paths):
        self.acc = np.zeros(x0.shape[0])

    def step(self, s):
        self.acc += self.fn(s.x_prev) * s.dt

    def finish(self):
        return {self.key: self.acc}


class BoundaryIntegral(PathObserver):
    """``int_0^t q(X_s) dl_s`` accumulated as ``q(contact point) * dl`` per step."""

    def __init__(self, q: Callable[[np.ndarray, np.ndarray], np.ndarray], key: str):
        self.q = q
        self.key = key

    def start(self, x0, paths):
        self.acc = np.zeros(x0.shape[0])

    def step(self, s):
        if np.any(s.contact):
            c = s.contact
            vals = self.q(s.x_new[c], s.projection.component[c])
            self.acc[c] += vals * s.dl[c]

    def finish(self):
        return {self.key: self.acc}


@dataclass(frozen=True)
class TransportFlags:
    """Boundary handling of the damped transport ``M``.

    ``include_boundary_projection`` multiplies by ``I - N N^T`` at contact steps,
    ``include_ii_damping`` by ``exp(-II dl)`` on the tangent space.  With both
    off only the interior matrix ODE ``dM = -M R dt`` is integrated.

    ``bridge_crossing`` additionally applies the normal projection with the
    Brownian-bridge probability ``exp(-rho_k rho_{k+1} / dt)`` of an unseen
    boundary visit between grid points.  This replaces the indicator of a visit
    by its conditional expectation given the skeleton and removes the leading
    ``O(sqrt(dt))`` bias of the first-contact time.
    """

    include_boundary_projection: bool = True
    include_ii_damping: bool = True
    bridge_crossing: bool = False

    @property
    def any(self) -> bool:
        return self.include_boundary_projection or self.include_ii_damping


def _hessian_step(drift: DriftField, X: np.ndarray, dt: float) -> np.ndarray:
    """``exp(dt Hess V(X))`` for every row; ``R = -Hess V`` in a flat domain."""
    if drift.constant_hessian is not None:
        lam, Q = np.linalg.eigh(drift.constant_hessian)
        E = (Q * np.exp(lam * dt)) @ Q.T
        return np.broadcast_to(E, (X.shape[0],) + E.shape)
    lam, Q = np.linalg.eigh(drift.hessian(X))
    return np.einsum("nij,nj,nkj->nik", Q, np.exp(lam * dt), Q)


def _apply_transport_step(M, E, s: StepData, flags: TransportFlags, domain: DomainModel | None = None) -> np.ndarray:
    """One step of ``M``: interior ODE factor, then boundary factors at contacts.

    Boundary factors are formed for every path and reduce to the identity
    where they do not apply, which avoids masked copies.
    """
    M = np.matmul(M, E)
    d = M.shape[-1]
    eye = np.eye(d)[None]
    c = s.contact
    if flags.bridge_crossing and flags.include_boundary_projection and domain is not None and not np.all(c):
        p = np.where(c, 0.0, np.exp(-domain.rho(s.x_prev) * domain.rho(s.x_new) / s.dt))
        n = domain.grad_rho(s.x_new)
        M = np.matmul(M, eye - p[:, None, None] * n[:, :, None] * n[:, None, :])
    if flags.any and np.any(c):
        cf = c.astype(float)[:, None, None]
        nn = s.projection.normal[:, :, None] * s.projection.normal[:, None, :]
        B = np.broadcast_to(eye, nn.shape)
        if flags.include_boundary_projection:
            B = B - cf * nn
        if flags.include_ii_damping:
            # isotropic II on model domains: scale the tangent directions
            damp = np.exp(-s.projection.ii * s.dl)
            B = B + cf * (damp[:, None, None] - 1.0) * (eye - nn)
        M = np.matmul(M, B)
    return M


class DampedTransportObserver(PathObserver):
    """Damped transport ``M_t`` and optionally the Bismut weight ``int h'(s) M_s^T dB_s``.

    ``schedule_increments[k]`` is ``h(t_{k+1}) - h(t_k)``; the weight uses
    ``M`` at the left end of each step (Ito sum).  A 2D array of shape
    ``(n_schedules, n_steps)`` gives one weight per schedule from the same
    transport, returned with shape ``(paths, n_schedules, d)``.
    """

    def __init__(self, drift: DriftField, flags: TransportFlags, schedule_increments=None,
                 track_norm_bound: tuple[float, float] | None = None, domain: DomainModel | None = None):
        if flags.bridge_crossing and domain is None:
            raise PreconditionError("the bridge-crossing correction needs the domain")
        self.domain = domain
        self.drift = drift
        self.flags = flags
        self.dh = None if schedule_increments is None else np.asarray(schedule_increments, dtype=float)
        self.bound = track_norm_bound

    def start(self, x0, paths):
        b, d = x0.shape
        self.M = np.broadcast_to(np.eye(d), (b, d, d)).copy()
        self.W = np.zeros((b, d) if self.dh is None or self.dh.ndim == 1 else (b, self.dh.shape[0], d))
        self.max_ratio = np.zeros(b)

    def step(self, s):
        if self.dh is not None:
            inc = np.einsum("bij,bi->bj", self.M, s.dB)
            if self.flags.bridge_crossing and self.flags.include_boundary_projection:
                inc -= self._post_visit_increment(s)
            if self.dh.ndim == 1:
                self.W += (self.dh[s.k] / s.dt) * inc
            else:
                self.W += (self.dh[:, s.k] / s.dt)[None, :, None] * inc[:, None, :]
        E = _hessian_step(self.drift, s.x_prev, s.dt)
        self.M = _apply_transport_step(self.M, E, s, self.flags, self.domain)
        if self.bound is not None:
            K, sigma = self.bound
            norm = np.linalg.norm(self.M, ord=2, axis=(1, 2))
            log_bound = K * (s.t + s.dt) + sigma * s.l_new
            self.max_ratio = np.maximum(self.max_ratio, np.log(np.maximum(norm, 1e-300)) - log_bound)

    def _post_visit_increment(self, s):
        """Expected ``N N^T M^T (B_{t_{k+1}} - B_tau)`` over a boundary visit at ``tau`` inside the step.

        The free endpoint sits at signed distance ``y`` (``-dl`` after a
        contact); given a visit the Brownian increment after ``tau`` is
        ``y / sqrt 2`` along the normal, and a visit has bridge probability
        ``exp(-rho_k y / dt)`` when ``y > 0``.
        """
        y = np.where(s.contact, -s.dl, self.domain.rho(s.x_new))
        prob = np.where(s.contact, 1.0, np.exp(-self.domain.rho(s.x_prev) * np.maximum(y, 0.0) / s.dt))
        n = np.where(s.contact[:, None], s.projection.normal, self.domain.grad_rho(s.x_new))
        mnn = np.einsum("bi,bij,bj->b", n, self.M, n)
        return (prob * y / SQRT2 * mnn)[:, None] * n

    def finish(self):
        out = {"transport": self.M, "bismut_weight": self.W}
        if self.bound is not None:
            out["log_norm_excess"] = self.max_ratio
        return out


# ---------------------------------------------------------------------------
# Simulation engine
# ---------------------------------------------------------------------------


@dataclass
class Ensemble:
    """Result of :func:`simulate_ensemble`: terminal data plus observer outputs."""

    domain: DomainModel
    drift: DriftField
    x0: np.ndarray
    t: float
    dt: float
    n_steps: int
    seed: int
    x_final: np.ndarray
    local_time: np.ndarray
    first_contact_step: np.ndarray
    extras: dict[str, np.ndarray] = field(default_factory=dict)
    scheme: str = "projection"

    @property
    def n_paths(self) -> int:
        return self.x_final.shape[0]

    def estimate(self, samples: np.ndarray) -> McEstimate:
        return McEstimate.from_samples(samples, self.dt, self.seed)

    def path(self, index: int) -> "PathSample":
        """Re-simulate one member exactly from ``(seed, index)``."""
        return simulate_reflecting_path(
            self.domain, self.drift, self.x0, self.t, self.dt, self.seed, path_index=index, scheme=self.scheme
        )


def _check_start(domain: DomainModel, x0) -> np.ndarray:
    if domain.dim == 1 and np.size(x0) == 1:
        x0 = float(np.asarray(x0, dtype=float).reshape(-1)[0])
    X, single = _as_points(x0, domain.dim)
    if not single:
        raise ValueError("x0 must be a single point")
    proj = domain.project(X)
    if proj.depth[0] > BOUNDARY_TOL:
        raise DomainError(f"x0={x0!r} outside the closure of the domain")
    return proj.points[0].copy()


def _free_step(drift, X, dB, dt, paths):
    Zx = drift.gradient(X)
    if not np.all(np.isfinite(Zx)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(Zx), axis=1))[0])
        raise SimulationError("non-finite drift at a visited point", path_index=int(paths[bad]))
    return X + SQRT2 * dB + Zx * dt


def _projection_step(domain, drift, X, dB, dt, paths):
    Y = _free_step(drift, X, dB, dt, paths)
    try:
        return domain.project(Y)
    except DegenerateProjectionError:
        pass
    # measure-zero event: redo the step as two half steps with half the increment
    total_dl = np.zeros(X.shape[0])
    Xh = X
    proj = None
    for _ in range(2):
        Y = _free_step(drift, Xh, 0.5 * dB, 0.5 * dt, paths)
        try:
            proj = domain.project(Y)
        except DegenerateProjectionError:
            r = np.linalg.norm(Y, axis=1)
            raise SimulationError("degenerate projection after step halving", path_index=int(paths[np.argmin(r)]))
        total_dl += proj.depth
        Xh = proj.points
    return Projection(proj.points, total_dl, proj.normal, proj.ii, proj.component)


def _run_block(domain, drift, x0, n_steps, dt, seed, paths, observers, scheme):
    b = len(paths)
    d = domain.dim
    X = np.tile(x0, (b, 1))
    l = np.zeros(b)
    first = np.full(b, -1, dtype=np.int64)
    obs = [factory() for factory in observers]
    for o in obs:
        o.start(X, paths)
    normals = rng.NormalStream(seed, paths, d)
    sqdt = math.sqrt(dt)
    if scheme == "skorokhod":
        U = X[:, 0].copy()
    for k in range(n_steps):
        if k % _STEP_CHUNK == 0:
            G = normals.draw(min(_STEP_CHUNK, n_steps - k)) * sqdt
        dB = G[:, k % _STEP_CHUNK, :]
        if scheme == "skorokhod":
            Y = _free_step(drift, X, dB, dt, paths)
            U = U + (Y[:, 0] - X[:, 0])
            l_next = np.maximum(l, -U)
            dl = l_next - l
            Xn = (U + l_next)[:, None]
            contact = dl > 0
            proj = Projection(Xn, dl, np.where(contact, 1.0, 0.0)[:, None], np.zeros(b), np.where(contact, 0, -1))
        else:
            proj = _projection_step(domain, drift, X, dB, dt, paths)
            Xn, dl = proj.points, proj.depth
            contact = dl > 0
            l_next = l + dl
        newly = contact & (first < 0)
        first[newly] = k
        s = StepData(k, k * dt, dt, X, Xn, dB, dl, l_next, contact, proj)
        for o in obs:
            o.step(s)
        X, l = Xn, l_next
    extras: dict[str, np.ndarray] = {}
    for o in obs:
        extras.update(o.finish())
    return X, l, first, extras


def _blocks(n_paths: int, n_steps: int, d: int) -> list[np.ndarray]:
    size = _BLOCK_PATHS
    return [np.arange(a, min(a + size, n_paths)) for a in range(0, n_paths, size)]


def simulate_ensemble(
    domain: DomainModel,
    drift: DriftField,
    x0,
    t: float,
    dt: float,
    n_paths: int,
    seed: int,
    observers: Iterable[Callable[[], PathObserver]] = (),
    n_workers: int = 1,
    scheme: str = "projection",
    path_offset: int = 0,
) -> Ensemble:
    """Simulate ``n_paths`` independent reflecting paths from ``x0`` up to time ``t``.

    Parameters
    ----------
    observers : iterable of zero-argument factories
        Each factory builds a fresh :class:`PathObserver` per block; their
        ``finish`` dictionaries are concatenated over blocks in path order.
    n_workers : int
        Thread count.  Path ``i`` always uses stream ``(seed, path_offset + i)``,
        so the output is identical for every worker count.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if scheme == "skorokhod" and not isinstance(domain, HalfLine):
        raise PreconditionError("the running-maximum Skorokhod map is implemented for the half-line only")
    start = _check_start(domain, x0)
    n_steps, dt_eff = time_grid(t, dt)
    observers = list(observers)
    blocks = [blk + path_offset for blk in _blocks(n_paths, n_steps, domain.dim)]

    def work(paths):
        return _run_block(domain, drift, start, n_steps, dt_eff, seed, paths, observers, scheme)

    if n_workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(b) for b in blocks]
    x_final = np.concatenate([r[0] for r in results])
    lt = np.concatenate([r[1] for r in results])
    first = np.concatenate([r[2] for r in results])
    extras = {key: np.concatenate([r[3][key] for r in results]) for key in results[0][3]}
    return Ensemble(domain, drift, start, t, dt_eff, n_steps, seed, x_final, lt, first, extras, scheme)


@dataclass(frozen=True)
class PathSample:
    """One discretised reflecting trajectory."""

    dt: float
    times: np.ndarray
    states: np.ndarray  # (n+1, d)
    local_time: np.ndarray  # (n+1,)
    brownian_increments: np.ndarray  # (n, d)
    contact_flags: np.ndarray | None  # (n,)
    seed: int = 0
    path_index: int = 0

    @property
    def first_contact_time(self) -> float:
        """Time at the end of the first contact step (``inf`` without contact)."""
        if self.contact_flags is None or not np.any(self.contact_flags):
            return math.inf
        return float(self.times[int(np.argmax(self.contact_flags)) + 1])

    def csv_rows(self):
        d = self.states.shape[1]
        for k, tk in enumerate(self.times):
            contact = bool(self.contact_flags[k - 1]) if k > 0 and self.contact_flags is not None else False
            yield [self.path_index, k, repr(float(tk))] + [repr(float(v)) for v in self.states[k, :d]] + [
                repr(float(self.local_time[k])), int(contact)]


def simulate_reflecting_path(domain, drift, x0, t, dt, seed: int, path_index: int = 0,
                             scheme: str = "projection") -> PathSample:
    """Simulate one path with the stream derived from ``(seed, path_index)``."""
    ens = simulate_ensemble(domain, drift, x0, t, dt, 1, seed, observers=[PathRecorder],
                            scheme=scheme, path_offset=path_index)
    n = ens.n_steps
    return PathSample(
        dt=ens.dt,
        times=np.arange(n + 1) * ens.dt,
        states=ens.extras["states"][0],
        local_time=ens.extras["local_time_path"][0],
        brownian_increments=ens.extras["increments"][0],
        contact_flags=ens.extras["contacts"][0],
        seed=seed,
        path_index=path_index,
    )


def write_path_csv(paths: Sequence[PathSample], fh) -> None:
    """Path dump with columns ``path_id, k, t_k, x_1..x_d, l, contact``."""
    d = paths[0].states.shape[1]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["path_id", "k", "t_k"] + [f"x_{i + 1}" for i in range(d)] + ["l", "contact"])
    for p in paths:
        w.writerows(p.csv_rows())


def skorokhod_map_halfline(x0: float, free_increments: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reflect a discrete input path on ``[0, inf)`` via the running maximum.

    Returns ``(X, l)`` with ``X_k = U_k + l_k`` and ``l_k = max(0, max_{j<=k} -U_j)``
    where ``U`` is ``x0`` plus the cumulative free increments.
    """
    U = x0 + np.concatenate([[0.0], np.cumsum(free_increments)])
    l = np.maximum.accumulate(np.maximum(-U, 0.0))
    return U + l, l


# ---------------------------------------------------------------------------
# Damped transport on a stored path
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MultiplicativeFunctional:
    matrices: np.ndarray  # (n+1, d, d)
    include_boundary_projection: bool
    include_ii_damping: bool

    def operator_norms(self) -> np.ndarray:
        return np.linalg.norm(self.matrices, ord=2, axis=(1, 2))


def damped_transport(path: PathSample, drift: DriftField, domain: DomainModel,
                     flags: TransportFlags = TransportFlags()) -> MultiplicativeFunctional:
    """Integrate ``M`` along a stored path (flat domain: ``R = -Hess V``)."""
    if flags.any and path.contact_flags is None:
        raise PreconditionError("boundary handling requested on a path without contact data")
    n = len(path.times) - 1
    d = path.states.shape[1]
    M = np.eye(d)[None]
    mats = [M[0].copy()]
    contacts = path.contact_flags if path.contact_flags is not None else np.zeros(n, dtype=bool)
    for k in range(n):
        X = path.states[k][None]
        Xn = path.states[k + 1][None]
        dl = np.array([path.local_time[k + 1] - path.local_time[k]])
        c = np.array([bool(contacts[k])])
        if c[0]:
            normal = domain.grad_rho(Xn)
            ii = domain.boundary_ii(domain.nearest_component(Xn))
        else:
            normal = np.zeros((1, d))
            ii = np.zeros(1)
        proj = Projection(Xn, dl, normal, ii, np.where(c, 0, -1))
        s = StepData(k, path.times[k], path.dt, X, Xn, path.brownian_increments[k][None], dl,
                     np.array([path.local_time[k + 1]]), c, proj)
        M = _apply_transport_step(M, _hessian_step(drift, X, path.dt), s, flags, domain)
        mats.append(M[0].copy())
    return MultiplicativeFunctional(np.array(mats), flags.include_boundary_projection, flags.include_ii_damping)


# ---------------------------------------------------------------------------
# Local-time functionals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpMomentTable:
    """Estimates of ``E^x exp(lambda l_t)`` on an ``x`` grid, ``lambda`` list and time ladder."""

    x_grid: np.ndarray
    lambdas: np.ndarray
    times: np.ndarray
    means: np.ndarray  # (n_x, n_lambda, n_t)
    stderrs: np.ndarray
    n_paths: int
    dt: float
    seed: int

    def estimate(self, ix: int, il: int = 0, it: int = -1) -> McEstimate:
        return McEstimate(float(self.means[ix, il, it]), float(self.stderrs[ix, il, it]),
                          self.n_paths, self.dt, self.seed)

    @property
    def sup(self) -> np.ndarray:
        """Grid supremum per ``(lambda, t)``: the ``eta_lambda(t)`` estimate."""
        return self.means.max(axis=0)

    @property
    def argmax(self) -> np.ndarray:
        return self.means.argmax(axis=0)

    def sup_estimate(self, il: int = 0, it: int = -1) -> tuple[McEstimate, np.ndarray]:
        ix = int(self.argmax[il, it])
        return self.estimate(ix, il, it), self.x_grid[ix]


def local_time_exp_moment(domain, drift, lam, t, x_grid, mc: McParams) -> ExpMomentTable:
    """Monte Carlo ``E^x e^{lambda l_t}`` per grid point, with the grid sup as ``eta_lambda(t)``.

    ``lam`` and ``t`` may be scalars or sequences; all times are read off the
    same paths (a coupled ladder), so estimates are nondecreasing in ``t``.
    """
    lambdas = np.atleast_1d(np.asarray(lam, dtype=float))
    if np.any(lambdas < 0):
        raise ValueError("lambda must be nonnegative")
    times = np.atleast_1d(np.asarray(t, dtype=float))
    xs = [np.atleast_1d(np.asarray(x, dtype=float)) for x in x_grid]
    if not xs:
        raise ValueError("empty x grid")
    t_max = float(times.max())
    n_steps, dt_eff = time_grid(t_max, mc.dt)
    idx = [int(round(tt / dt_eff)) for tt in times]
    if any(abs(i * dt_eff - tt) > 1e-9 * max(1.0, tt) for i, tt in zip(idx, times)):
        raise ValueError("ladder times must be multiples of the effective step")
    means = np.zeros((len(xs), len(lambdas), len(times)))
    stderrs = np.zeros_like(means)
    for ix, x in enumerate(xs):
        ens = simulate_ensemble(domain, drift, x if domain.dim > 1 else float(x[0]), t_max, mc.dt,
                                mc.n_paths, mc.seed, observers=[lambda: LocalTimeLadder(idx)],
                                n_workers=mc.n_workers, scheme=mc.scheme)
        lad = ens.extras["local_time_ladder"]
        for il, la in enumerate(lambdas):
            est = McEstimate.from_samples(np.exp(la * lad), dt_eff, mc.seed)
            means[ix, il] = est.mean
            stderrs[ix, il] = est.stderr
    grid = np.array([x if domain.dim > 1 else x[0] for x in xs])
    return ExpMomentTable(grid, lambdas, times, means, stderrs, mc.n_paths, dt_eff, mc.seed)


def psi_generator(domain: DomainModel, drift: DriftField, profile: ComparisonProfile):
    """Vectorised ``L(psi o rho) = psi'(rho) L rho + psi''(rho) |grad rho|^2``."""

    def fn(X):
        r = domain.rho(X)
        out = np.zeros(X.shape[0])
        inside = r < profile.r
        if np.any(inside):
            Xi = X[inside]
            ri = r[inside]
            g = domain.grad_rho(Xi)
            lrho = domain.laplacian_rho(Xi) + np.sum(drift.gradient(Xi) * g, axis=1)
            out[inside] = profile.dpsi(ri) * lrho + profile.d2psi(ri) * np.sum(g * g, axis=1)
        return out

    return fn


@dataclass(frozen=True)
class LocalTimeIdentity:
    direct: McEstimate  # E l_t
    reconstructed: McEstimate  # E[psi(rho(X_t))] - psi(rho(x0)) - E int L psi(rho) ds
    difference: McEstimate  # pathwise difference of the two

    @property
    def combined_stderr(self) -> float:
        return math.hypot(self.direct.stderr, self.reconstructed.stderr)


def local_time_identity(domain, drift, profile: ComparisonProfile, x0, t: float, mc: McParams) -> LocalTimeIdentity:
    """Reconstruct ``E l_t`` from the Ito formula for ``psi o rho`` (``psi'(0) = 1``)."""
    gen = psi_generator(domain, drift, profile)
    ens = simulate_ensemble(domain, drift, x0, t, mc.dt, mc.n_paths, mc.seed,
                            observers=[lambda: TimeIntegral(gen, "int_Lpsi")],
                            n_workers=mc.n_workers, scheme=mc.scheme)
    psi_end = profile.psi(domain.rho(ens.x_final))
    psi_start = float(profile.psi(domain.rho(ens.x0[None]))[0])
    recon = psi_end - psi_start - ens.extras["int_Lpsi"]
    return LocalTimeIdentity(
        ens.estimate(ens.local_time), ens.estimate(recon), ens.estimate(recon - ens.local_time)
    )
