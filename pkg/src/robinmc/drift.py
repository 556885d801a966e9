"""Gradient drifts ``Z = grad V`` on flat domains and their curvature constants."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import PreconditionError


@dataclass(frozen=True)
class DriftField:
    """Potential ``V`` with gradient and Hessian, vectorised over ``(n, d)`` points.

    In a flat domain the curvature condition ``Ric - grad Z >= -K`` reads
    ``Hess V <= K``; ``kappa1(x)`` is the pointwise largest eigenvalue of
    ``Hess V``.
    """

    dim: int
    potential: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    K: float
    name: str = "custom"
    params: dict = field(default_factory=dict)
    constant_hessian: np.ndarray | None = None
    # isotropic quadratic about the origin: V = a/2 |x|^2 + c
    isotropic_coefficient: float | None = None

    # -- constructors --------------------------------------------------------
    @classmethod
    def zero(cls, dim: int) -> "DriftField":
        return cls.isotropic_quadratic(0.0, dim, name="zero")

    @classmethod
    def isotropic_quadratic(cls, a: float, dim: int, name: str = "quadratic") -> "DriftField":
        """``V(x) = (a/2) |x|^2`` so that ``Z = a x`` and ``Hess V = a I``."""
        a = float(a)
        H = a * np.eye(dim)
        return cls(
            dim=dim,
            potential=lambda X: 0.5 * a * np.sum(X * X, axis=1),
            gradient=lambda X: a * X,
            hessian=lambda X: np.broadcast_to(H, (X.shape[0], dim, dim)),
            K=a,
            name=name,
            params={"a": a},
            constant_hessian=H,
            isotropic_coefficient=a,
        )

    @classmethod
    def quadratic_form(cls, H, center=None) -> "DriftField":
        """``V(x) = 1/2 (x - c)^T H (x - c)`` for a symmetric matrix ``H``."""
        H = np.atleast_2d(np.asarray(H, dtype=float))
        if not np.allclose(H, H.T):
            raise ValueError("Hessian must be symmetric")
        dim = H.shape[0]
        c = np.zeros(dim) if center is None else np.asarray(center, dtype=float).reshape(dim)
        K = float(np.linalg.eigvalsh(H).max())

        def potential(X):
            Y = X - c
            return 0.5 * np.einsum("ni,ij,nj->n", Y, H, Y)

        return cls(
            dim=dim,
            potential=potential,
            gradient=lambda X: (X - c) @ H,
            hessian=lambda X: np.broadcast_to(H, (X.shape[0], dim, dim)),
            K=K,
            name="quadratic_form",
            params={"H": H.tolist(), "center": c.tolist()},
            constant_hessian=H,
            isotropic_coefficient=float(H[0, 0]) if np.allclose(H, H[0, 0] * np.eye(dim)) and not np.any(c) else None,
        )

    # -- derived quantities --------------------------------------------------
    def kappa1(self, X: np.ndarray) -> np.ndarray:
        """Pointwise largest eigenvalue of ``Hess V``."""
        if self.constant_hessian is not None:
            return np.full(X.shape[0], float(np.linalg.eigvalsh(self.constant_hessian).max()))
        return np.linalg.eigvalsh(self.hessian(X))[:, -1]

    def delta_r(self, domain, r: float) -> float:
        """``sup`` over the ``r``-collar of the negative part of ``<Z, grad rho>``."""
        X = domain.sample_collar(r)
        inner = np.sum(self.gradient(X) * domain.grad_rho(X), axis=1)
        return float(np.max(np.maximum(-inner, 0.0)))

    def sup_normal_component(self, domain) -> float:
        Y = domain.sample_boundary()
        return float(np.max(np.sum(self.gradient(Y) * domain.grad_rho(Y), axis=1)))

    def validate(self, domain, n: int = 2048, seed: int = 0) -> None:
        """Check ``kappa1 <= K`` on sampled interior points."""
        rng = np.random.default_rng(seed)
        X = domain.sample_interior(n, rng)
        k1 = self.kappa1(X)
        if np.any(k1 > self.K + 1e-12):
            raise PreconditionError(f"K={self.K} below sampled Hess V eigenvalue {k1.max():.6g}")

    # -- scalar coordinate helpers used by the PDE reference ------------------
    def potential_1d(self, x):
        x = np.asarray(x, dtype=float)
        return self.potential(x.reshape(-1, 1)).reshape(x.shape)

    def dpotential_1d(self, x):
        x = np.asarray(x, dtype=float)
        return self.gradient(x.reshape(-1, 1))[:, 0].reshape(x.shape)

    def radial_potential(self, r):
        a = self._radial_coefficient()
        return 0.5 * a * np.asarray(r, dtype=float) ** 2

    def radial_dpotential(self, r):
        a = self._radial_coefficient()
        return a * np.asarray(r, dtype=float)

    def _radial_coefficient(self) -> float:
        if self.isotropic_coefficient is None:
            raise PreconditionError("drift is not radially symmetric about the origin")
        return self.isotropic_coefficient

    def describe(self) -> dict:
        return {"name": self.name, **self.params, "K": self.K}


def make_drift(spec: dict | None, dim: int) -> DriftField:
    """Named drifts for configs: ``zero``, ``quadratic`` (``a``) and ``quadratic_form`` (``H``, ``center``)."""
    if spec is None:
        return DriftField.zero(dim)
    spec = dict(spec)
    name = spec.pop("name")
    if name == "zero":
        return DriftField.zero(dim)
    if name == "quadratic":
        return DriftField.isotropic_quadratic(spec["a"], dim)
    if name == "quadratic_form":
        return DriftField.quadratic_form(spec["H"], spec.get("center"))
    raise ValueError(f"unknown drift {name!r}")

