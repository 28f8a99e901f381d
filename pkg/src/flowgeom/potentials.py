"""Strongly convex base potentials and their conjugate gradients.

Only the diagonal quadratic (an axis-aligned Gaussian negative log-density up
to a constant) ships as a concrete potential, but the geometry code is written
against the interface so any smooth strongly convex function with a known
conjugate gradient plugs in.
"""

from __future__ import annotations

import numpy as np

from .engine import Parameter


class ConvexPotential:
    """Interface for a smooth strongly convex function on R^d.

    ``conjugate_grad`` must be the exact inverse of ``grad`` (the gradient of
    the Fenchel conjugate), and ``mu`` a strong-convexity constant.
    """

    dim: int
    mu: float

    def value(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def conjugate_grad(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian_apply(self, v: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def conjugate_hessian_apply(self, w: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Apply the Jacobian of ``conjugate_grad`` at w to u.

        Default: assemble the Hessian of the potential at ``conjugate_grad(w)``
        column by column and solve.  Concrete classes with a closed form
        should override.
        """
        v = self.conjugate_grad(w)
        d = v.shape[-1]
        basis = np.eye(d)
        hess = np.stack([self.hessian_apply(v, basis[i]) for i in range(d)], axis=-1)
        return np.linalg.solve(hess, u)


class DiagonalQuadratic(ConvexPotential):
    """v -> 0.5 * sum_i v_i^2 / lam_i with positive per-axis variances lam.

    The variances are stored through their logs in a trainable
    :class:`Parameter`, so positivity holds by construction and the same
    object can sit inside a training graph or a frozen geometry.
    """

    def __init__(self, dim: int, variances=None, trainable: bool = True):
        self.dim = int(dim)
        if variances is None:
            logs = np.zeros(self.dim)
        else:
            variances = np.asarray(variances, dtype=np.float64)
            if variances.shape != (self.dim,):
                raise ValueError(
                    f"expected {self.dim} variances, got shape {variances.shape}"
                )
            if not np.all(variances > 0):
                raise ValueError("variances must be positive")
            logs = np.log(variances)
        self.log_variances = Parameter(logs, "potential.log_variances")
        self.trainable = bool(trainable)

    @property
    def variances(self) -> np.ndarray:
        return np.exp(self.log_variances.value)

    @property
    def mu(self) -> float:
        return float(1.0 / self.variances.max())

    def value(self, v):
        v = np.asarray(v, dtype=np.float64)
        return 0.5 * np.sum(v * v / self.variances, axis=-1)

    def grad(self, v):
        return np.asarray(v, dtype=np.float64) / self.variances

    def conjugate_grad(self, w):
        return np.asarray(w, dtype=np.float64) * self.variances

    def hessian_apply(self, v, u):
        return np.asarray(u, dtype=np.float64) / self.variances

    def conjugate_hessian_apply(self, w, u):
        return np.asarray(u, dtype=np.float64) * self.variances

    def sorted_variance_order(self) -> np.ndarray:
        """Indices ordering the variances descending, ties by original index."""
        return np.argsort(-self.variances, kind="stable")

    def __repr__(self) -> str:
        return f"DiagonalQuadratic(dim={self.dim}, variances={self.variances!r})"
