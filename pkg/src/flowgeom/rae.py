"""Riemannian autoencoder built from coordinate projections in flow space.

The encoder reads off flow-space coordinates along the highest-variance base
axes; the decoder zero-fills the discarded axes and maps back through the
inverse flow.  The retained dimension is the smallest one whose discarded
variance mass stays below a relative threshold epsilon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def select_dimension(variances, epsilon: float) -> int:
    """Smallest d' in [1, d-1] with descending-order tail sum <= epsilon *
    total variance; d if even the smallest variance exceeds that budget."""
    lam = np.asarray(variances, dtype=np.float64)
    if np.any(lam <= 0):
        raise ValueError("variances must be positive")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    d = lam.size
    if d == 1:
        return 1
    order = np.argsort(-lam, kind="stable")
    lam_sorted = lam[order]
    budget = epsilon * lam.sum()
    if lam_sorted[-1] > budget:
        return d
    # tail[k] = sum of lam_sorted[k+1:]
    tails = lam_sorted.sum() - np.cumsum(lam_sorted)
    for d_prime in range(1, d):
        if tails[d_prime - 1] <= budget:
            return d_prime
    return d


@dataclass
class RaeConfig:
    """Variance ordering and retained dimension for one trained model."""

    epsilon: float
    order: np.ndarray  # all d axis indices, variances descending
    d_eps: int

    @classmethod
    def from_variances(cls, variances, epsilon: float) -> "RaeConfig":
        lam = np.asarray(variances, dtype=np.float64)
        order = np.argsort(-lam, kind="stable")
        return cls(epsilon=float(epsilon), order=order, d_eps=select_dimension(lam, epsilon))

    @property
    def retained(self) -> np.ndarray:
        return self.order[: self.d_eps]


def encode(manifold, config: RaeConfig, x) -> np.ndarray:
    """Flow-space coordinates along the retained axes, highest variance first."""
    return np.asarray(manifold.to_flow_coords(x))[..., config.retained]


def decode(manifold, config: RaeConfig, z) -> np.ndarray:
    """Inverse flow of the latent embedded on the retained axes (zeros elsewhere)."""
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    if z.shape[-1] != config.d_eps:
        raise ValueError(f"latent has {z.shape[-1]} dims, expected {config.d_eps}")
    full = np.zeros(z.shape[:-1] + (config.order.size,))
    full[..., config.retained] = z
    return manifold.from_flow_coords(full)


def _errors_for_order(manifold, x, flow_coords, axis_order):
    """Mean data-space l2 reconstruction error for k = 0 .. d retained axes."""
    d = axis_order.size
    errors = np.empty(d + 1)
    masked = np.zeros_like(flow_coords)
    errors[0] = np.linalg.norm(manifold.from_flow_coords(masked) - x, axis=-1).mean()
    for k in range(1, d + 1):
        ax = axis_order[k - 1]
        masked[:, ax] = flow_coords[:, ax]
        recon = manifold.from_flow_coords(masked)
        errors[k] = np.linalg.norm(recon - x, axis=-1).mean()
    return errors


def reconstruction_curve(manifold, x, order: str = "decreasing", seed=None):
    """Reconstruction error as axes are added in a variance-based order.

    ``order`` is one of ``decreasing``, ``increasing``, ``random``; the
    random order is a seeded shuffle and the resolved axis order is returned
    so reports stay reproducible.  Returns (ks, errors, axis_order).
    """
    x = np.asarray(x, dtype=np.float64)
    lam = manifold.potential.variances
    descending = np.argsort(-lam, kind="stable")
    if order == "decreasing":
        axis_order = descending
    elif order == "increasing":
        axis_order = descending[::-1]
    elif order == "random":
        if seed is None:
            raise ValueError("random order needs a seed")
        axis_order = np.random.default_rng(seed).permutation(lam.size)
    else:
        raise ValueError(f"unknown order {order!r}")
    flow_coords = manifold.to_flow_coords(x)
    errors = _errors_for_order(manifold, x, flow_coords, axis_order)
    return np.arange(lam.size + 1), errors, axis_order


def manifold_mesh(manifold, config: RaeConfig, grid_points: int):
    """Decode a regular latent grid spanning +-3 standard deviations per axis.

    Only sensible for d_eps <= 3 (visualization scale); larger latent spaces
    should be summarized with :func:`reconstruction_curve` instead.
    Returns (latents, decoded) with one row per grid node.
    """
    if config.d_eps > 3:
        raise ValueError(
            f"manifold_mesh supports d_eps <= 3, got {config.d_eps}; "
            "use reconstruction_curve for higher-dimensional latents"
        )
    if grid_points < 1:
        raise ValueError("grid_points must be >= 1")
    lam = manifold.potential.variances[config.retained]
    axes = [
        np.linspace(-3.0 * np.sqrt(l), 3.0 * np.sqrt(l), grid_points) if grid_points > 1
        else np.zeros(1)
        for l in lam
    ]
    grids = np.meshgrid(*axes, indexing="ij")
    latents = np.stack([g.reshape(-1) for g in grids], axis=1)
    return latents, decode(manifold, config, latents)


def bound_check_identity(variances, epsilon: float, n_samples: int, seed: int = 0):
    """Monte-Carlo check of the first-order reconstruction bound for an
    identity diffeomorphism, where the bound constants all equal one.

    Draws n Gaussian samples with the given per-axis variances, measures the
    mean squared reconstruction error of the autoencoder, and compares it to
    the analytic value (the discarded variance mass) and to the first-order
    budget epsilon * total variance.  Returns (empirical, bound).
    """
    from .geometry import PullbackManifold, identity_diffeo
    from .potentials import DiagonalQuadratic

    lam = np.asarray(variances, dtype=np.float64)
    d = lam.size
    config = RaeConfig.from_variances(lam, epsilon)
    manifold = PullbackManifold(identity_diffeo(d), DiagonalQuadratic(d, lam))
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(int(n_samples), d)) * np.sqrt(lam)

    recon = decode(manifold, config, encode(manifold, config, x))
    sq_err = ((recon - x) ** 2).sum(axis=1)
    empirical = float(sq_err.mean())
    analytic_tail = float(lam[config.order[config.d_eps:]].sum())
    bound = float(epsilon * lam.sum())

    stderr = float(sq_err.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
    if abs(empirical - analytic_tail) > 5.0 * stderr + 1e-12:
        raise AssertionError(
            f"empirical error {empirical} deviates from analytic tail "
            f"{analytic_tail} by more than 5 standard errors ({stderr})"
        )
    if empirical > bound + 5.0 * stderr + 1e-12:
        raise AssertionError(
            f"empirical error {empirical} exceeds the first-order bound {bound}"
        )
    return empirical, bound
