"""Closed-form manifold mappings of the pullback metric induced by a
diffeomorphism composed with the gradient of a strongly convex potential.

With F = grad(psi) o phi (a diffeomorphism whenever psi is strongly convex),
geodesics are straight lines in F-coordinates, mapped back through
F^{-1} = phi^{-1} o grad(psi*).  For a diagonal quadratic psi every mapping
collapses to the same expression with phi alone, which is the branch used by
default; the general expressions stay available for any potential and for
cross-checking.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatchError
from .potentials import ConvexPotential, DiagonalQuadratic


class GroundTruthDiffeo:
    """Analytic diffeomorphism with closed-form inverse and Jacobian.

    Mirrors the numeric interface of a learned flow (forward returns the
    mapped point together with the log-determinant), so the same geometry
    code runs against either.
    """

    def __init__(self, dim, forward_fn, inverse_fn, jacobian_fn, name, params=None,
                 unit_det=True):
        self.dim = int(dim)
        self._forward = forward_fn
        self._inverse = inverse_fn
        self._jacobian = jacobian_fn
        self.name = name
        self.params = dict(params or {})
        self._unit_det = bool(unit_det)

    def _as_batch(self, x, label="x"):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[-1] != self.dim:
            raise DimensionMismatchError(
                f"{label} has shape {x.shape}, diffeomorphism dimension is {self.dim}"
            )
        return x, single

    def forward(self, x):
        xb, single = self._as_batch(x)
        y = self._forward(xb)
        if self._unit_det:
            logdet = np.zeros(xb.shape[0])
        else:
            logdet = np.linalg.slogdet(self._jacobian(xb))[1]
        return (y[0], logdet[0]) if single else (y, logdet)

    def inverse(self, y):
        yb, single = self._as_batch(y, "y")
        x = self._inverse(yb)
        return x[0] if single else x

    def jacobian(self, x):
        xb, single = self._as_batch(x)
        jac = self._jacobian(xb)
        return jac[0] if single else jac

    def jvp(self, x, v):
        xb, single = self._as_batch(x)
        vb, _ = self._as_batch(v, "v")
        out = np.einsum("nij,nj->ni", self._jacobian(xb), vb)
        return out[0] if single else out

    def __repr__(self):
        return f"GroundTruthDiffeo({self.name!r}, dim={self.dim}, params={self.params})"


def banana_diffeo(a: float = 1.0 / 9.0, z: float = 0.0) -> GroundTruthDiffeo:
    """(x1, x2) -> (x1 - a*x2^2 - z, x2); inverse adds a*y2^2 + z back."""

    def fwd(x):
        return np.stack([x[:, 0] - a * x[:, 1] ** 2 - z, x[:, 1]], axis=1)

    def inv(y):
        return np.stack([y[:, 0] + a * y[:, 1] ** 2 + z, y[:, 1]], axis=1)

    def jac(x):
        n = x.shape[0]
        out = np.tile(np.eye(2), (n, 1, 1))
        out[:, 0, 1] = -2.0 * a * x[:, 1]
        return out

    return GroundTruthDiffeo(2, fwd, inv, jac, "banana", {"a": a, "z": z})


def river_diffeo(a: float = 2.0, z: float = 0.0) -> GroundTruthDiffeo:
    """(x1, x2) -> (x1 - sin(a*x2) - z, x2)."""

    def fwd(x):
        return np.stack([x[:, 0] - np.sin(a * x[:, 1]) - z, x[:, 1]], axis=1)

    def inv(y):
        return np.stack([y[:, 0] + np.sin(a * y[:, 1]) + z, y[:, 1]], axis=1)

    def jac(x):
        n = x.shape[0]
        out = np.tile(np.eye(2), (n, 1, 1))
        out[:, 0, 1] = -a * np.cos(a * x[:, 1])
        return out

    return GroundTruthDiffeo(2, fwd, inv, jac, "river", {"a": a, "z": z})


def identity_diffeo(dim: int) -> GroundTruthDiffeo:
    def fwd(x):
        return x.copy()

    def jac(x):
        return np.tile(np.eye(dim), (x.shape[0], 1, 1))

    return GroundTruthDiffeo(dim, fwd, fwd, jac, "identity")


class PullbackManifold:
    """(diffeomorphism, convex potential) pair with closed-form mappings.

    ``diffeo`` is a learned flow or a :class:`GroundTruthDiffeo`;
    ``potential`` any :class:`ConvexPotential`.  Pass ``general_form=True``
    to force the general expressions even for a quadratic potential (they
    agree algebraically; useful for cross-checks).
    """

    def __init__(self, diffeo, potential: ConvexPotential, general_form: bool = False):
        if diffeo.dim != potential.dim:
            raise DimensionMismatchError(
                f"diffeomorphism dimension {diffeo.dim} != potential dimension "
                f"{potential.dim}"
            )
        self.diffeo = diffeo
        self.potential = potential
        self.dim = diffeo.dim
        self._quadratic = isinstance(potential, DiagonalQuadratic) and not general_form

    # -- the composed map F = grad(psi) o phi and its inverse ---------------

    def to_flow_coords(self, x):
        y, _ = self.diffeo.forward(x)
        return y

    def from_flow_coords(self, y):
        return self.diffeo.inverse(y)

    def to_score_coords(self, x):
        return self.potential.grad(self.to_flow_coords(x))

    def from_score_coords(self, w):
        return self.from_flow_coords(self.potential.conjugate_grad(w))

    # -- mappings ------------------------------------------------------------

    def geodesic(self, x, y, t: float):
        """Point at parameter t on the length-minimizing geodesic x -> y."""
        if self._quadratic:
            fx, fy = self.to_flow_coords(x), self.to_flow_coords(y)
            return self.from_flow_coords((1.0 - t) * fx + t * fy)
        fx, fy = self.to_score_coords(x), self.to_score_coords(y)
        return self.from_score_coords((1.0 - t) * fx + t * fy)

    def geodesic_curve(self, x, y, steps: int):
        """Geodesic sampled at t_k = (k-1)/(steps-1), endpoints included."""
        if steps < 2:
            raise ValueError("a geodesic curve needs at least 2 steps")
        t = np.linspace(0.0, 1.0, steps)[:, None]
        if self._quadratic:
            fx, fy = self.to_flow_coords(x), self.to_flow_coords(y)
            return self.from_flow_coords((1.0 - t) * fx[None, :] + t * fy[None, :])
        fx, fy = self.to_score_coords(x), self.to_score_coords(y)
        return self.from_score_coords((1.0 - t) * fx[None, :] + t * fy[None, :])

    def log_map(self, x, y):
        """Tangent at x pointing to y (inverse of exp_map)."""
        fx, fy = self.to_flow_coords(x), self.to_flow_coords(y)
        if self._quadratic:
            delta = fy - fx
        else:
            wx = self.potential.grad(fx)
            wy = self.potential.grad(fy)
            delta = self.potential.conjugate_hessian_apply(wx, wy - wx)
        # D phi^{-1} at phi(x) via LU solve against the forward Jacobian.
        return np.linalg.solve(self.diffeo.jacobian(x), delta)

    def exp_map(self, x, v):
        """Follow the geodesic from x with initial velocity v for unit time."""
        push = self.diffeo.jvp(x, v)
        fx = self.to_flow_coords(x)
        if self._quadratic:
            return self.from_flow_coords(fx + push)
        wx = self.potential.grad(fx)
        return self.from_score_coords(wx + self.potential.hessian_apply(fx, push))

    def distance(self, x, y):
        if self._quadratic:
            diff = self.potential.grad(
                self.to_flow_coords(x) - self.to_flow_coords(y)
            )
        else:
            diff = self.to_score_coords(x) - self.to_score_coords(y)
        return np.linalg.norm(diff, axis=-1)

    def barycentre(self, points):
        """Riemannian mean: the minimizer of summed squared distances."""
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[0] == 0:
            raise ValueError("barycentre needs a non-empty (n, d) array of points")
        if self._quadratic:
            return self.from_flow_coords(self.to_flow_coords(points).mean(axis=0))
        return self.from_score_coords(self.to_score_coords(points).mean(axis=0))
