"""Synthetic dataset generators and the MCMC sampler behind them.

The 2-D targets (banana, squeezed banana, river) are deformed Gaussians with
an analytic diffeomorphism and diagonal covariance; samples come from
Langevin proposals with a Metropolis-Hastings correction, one independent
chain per sample started at the origin.  The hemisphere and sinusoid
generators build low-dimensional manifolds embedded in higher-dimensional
space directly.

Randomness policy: every generator consumes a single integer seed through
numpy SeedSequence.  The MCMC sampler spawns one child stream per chain
(each chain draws its Gaussian proposals first, then its uniform accept
draws), so chains are order-independent and a dataset is bitwise
reproducible for a fixed (seed, parameters) pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import math

import numpy as np

from .errors import FileFormatError
from .geometry import GroundTruthDiffeo, banana_diffeo, river_diffeo
from .potentials import DiagonalQuadratic


@dataclass
class Dataset:
    """Sample matrix plus the provenance needed to regenerate it."""

    samples: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def save(self, path) -> None:
        """CSV with header x1..xd plus a JSON metadata sidecar."""
        path = str(path)
        header = ",".join(f"x{i + 1}" for i in range(self.dim))
        np.savetxt(path, self.samples, fmt="%.17g", delimiter=",",
                   header=header, comments="")
        with open(path + ".meta.json", "w", encoding="utf-8") as fh:
            json.dump(self.metadata, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Dataset":
        path = str(path)
        try:
            samples = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        except OSError as exc:
            raise FileFormatError(f"cannot read dataset {path}: {exc}") from exc
        except ValueError as exc:
            raise FileFormatError(f"dataset {path} is not numeric CSV: {exc}") from exc
        metadata = {}
        try:
            with open(path + ".meta.json", "r", encoding="utf-8") as fh:
                metadata = json.load(fh)
        except OSError:
            pass  # sidecar is optional on load
        except json.JSONDecodeError as exc:
            raise FileFormatError(
                f"metadata sidecar for {path} is not valid JSON: {exc}"
            ) from exc
        return cls(samples=np.asarray(samples, dtype=np.float64), metadata=metadata)


class TargetDensity:
    """Unnormalized density exp(-psi(phi(x))) with exact score.

    ``diffeo`` supplies the analytic map and Jacobian; psi is the diagonal
    quadratic with the given variances.  log_density is up to an additive
    constant.
    """

    def __init__(self, diffeo: GroundTruthDiffeo, variances, name: str):
        self.diffeo = diffeo
        self.variances = np.asarray(variances, dtype=np.float64)
        self.name = name
        self.dim = diffeo.dim

    def potential(self) -> DiagonalQuadratic:
        return DiagonalQuadratic(self.dim, self.variances, trainable=False)

    def log_density(self, x) -> np.ndarray:
        y, _ = self.diffeo.forward(np.asarray(x, dtype=np.float64))
        return -0.5 * np.sum(y * y / self.variances, axis=-1)

    def score(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y, _ = self.diffeo.forward(x)
        grad_psi = y / self.variances
        jac = self.diffeo.jacobian(x)
        if x.ndim == 1:
            return -jac.T @ grad_psi
        return -np.einsum("nji,nj->ni", jac, grad_psi)


def make_banana(variant: str = "single") -> TargetDensity:
    """Banana-shaped deformed Gaussian; 'squeezed' narrows the ridge."""
    if variant == "single":
        return TargetDensity(banana_diffeo(), [0.25, 4.0], "banana")
    if variant == "squeezed":
        return TargetDensity(banana_diffeo(), [1.0 / 81.0, 4.0], "squeezed_banana")
    raise ValueError(f"unknown banana variant {variant!r}")


def make_river() -> TargetDensity:
    """Meandering ridge along a sine curve."""
    return TargetDensity(river_diffeo(), [1.0 / 25.0, 3.0], "river")


TARGETS = {
    "banana": lambda: make_banana("single"),
    "squeezed_banana": lambda: make_banana("squeezed"),
    "river": make_river,
}


def get_target(name: str) -> TargetDensity:
    try:
        return TARGETS[name]()
    except KeyError:
        raise ValueError(
            f"unknown target {name!r}; available: {sorted(TARGETS)}"
        ) from None


def langevin_mh_sample(target: TargetDensity, n: int, steps: int = 2500,
                       step_size: float = 0.15, seed: int = 0,
                       chain_block: int = 2048) -> Dataset:
    """Draw n samples, one Metropolis-adjusted Langevin chain per sample.

    Each chain starts at the origin and runs ``steps`` proposals
    x' = x + (delta^2/2) score(x) + delta * eta with eta ~ N(0, I); the
    acceptance probability is min(1, p(x')/p(x) * exp(-K_fwd + K_rev)) with
    the Gaussian proposal kernels

        K_fwd = ||x - x' - (delta^2/2) score(x')||^2 / (2 delta^2)
        K_rev = ||x' - x - (delta^2/2) score(x)||^2 / (2 delta^2),

    which make the chain exactly reversible for the target (checked by the
    moment tests against the known pushforward Gaussian).  Chains are
    vectorized in blocks; rejected proposals keep the state.
    """
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    n = int(n)
    d = target.dim
    delta = float(step_size)
    half_d2 = 0.5 * delta * delta
    inv_2d2 = 1.0 / (2.0 * delta * delta)

    children = np.random.SeedSequence(seed).spawn(n)
    samples = np.empty((n, d))
    accepted = 0
    for start in range(0, n, chain_block):
        block = children[start:start + chain_block]
        b = len(block)
        noise = np.empty((b, steps, d))
        unif = np.empty((b, steps))
        for i, child in enumerate(block):
            rng = np.random.Generator(np.random.PCG64(child))
            noise[i] = rng.normal(size=(steps, d))
            unif[i] = rng.uniform(size=steps)

        x = np.zeros((b, d))
        logp = target.log_density(x)
        score = target.score(x)
        for k in range(steps):
            prop = x + half_d2 * score + delta * noise[:, k, :]
            logp_prop = target.log_density(prop)
            score_prop = target.score(prop)
            k_fwd = np.sum((x - prop - half_d2 * score_prop) ** 2, axis=1) * inv_2d2
            k_rev = np.sum((prop - x - half_d2 * score) ** 2, axis=1) * inv_2d2
            log_alpha = logp_prop - logp - k_fwd + k_rev
            accept = np.log(unif[:, k]) < log_alpha
            x[accept] = prop[accept]
            logp[accept] = logp_prop[accept]
            score[accept] = score_prop[accept]
            accepted += int(accept.sum())
        samples[start:start + b] = x

    metadata = {
        "generator": target.name,
        "params": {
            "diffeo": target.diffeo.params,
            "variances": [float(v) for v in target.variances],
            "steps": steps,
            "step_size": step_size,
        },
        "seed": int(seed),
        "n": n,
        "d": d,
        "acceptance_rate": accepted / (n * steps),
    }
    return Dataset(samples=samples, metadata=metadata)


def make_hemisphere(intrinsic_dim: int, ambient_dim: int, n: int,
                    seed: int = 0) -> Dataset:
    """Upper unit hemisphere of dimension d', isometrically embedded in R^d.

    The polar angle comes from Beta(5, 5) scaled to [0, pi/2] (realized as a
    ratio of two Gamma(5) draws), the remaining angles are uniform on
    [0, pi], and the embedding is the Q factor of a Gaussian d x (d'+1)
    matrix, so pairwise distances are preserved exactly.
    """
    dp, d, n = int(intrinsic_dim), int(ambient_dim), int(n)
    if dp < 1:
        raise ValueError("intrinsic_dim must be >= 1")
    if d < dp + 1:
        raise ValueError(
            f"ambient_dim must be at least intrinsic_dim + 1 ({dp + 1}), got {d}"
        )
    rng = np.random.default_rng(seed)
    gauss = rng.normal(size=(d, dp + 1))
    q, _ = np.linalg.qr(gauss)

    g1 = rng.gamma(5.0, size=n)
    g2 = rng.gamma(5.0, size=n)
    theta1 = (g1 / (g1 + g2)) * (math.pi / 2.0)
    rest = rng.uniform(0.0, math.pi, size=(n, dp - 1)) if dp > 1 else np.empty((n, 0))
    angles = np.column_stack([theta1, rest])

    cart = np.empty((n, dp + 1))
    sin_prod = np.cumprod(np.sin(angles), axis=1)
    cart[:, 0] = np.cos(angles[:, 0])
    for j in range(1, dp):
        cart[:, j] = sin_prod[:, j - 1] * np.cos(angles[:, j])
    cart[:, dp] = sin_prod[:, dp - 1]

    samples = cart @ q.T
    metadata = {
        "generator": "hemisphere",
        "params": {
            "intrinsic_dim": dp,
            "ambient_dim": d,
            "embedding": [[float(v) for v in row] for row in q],
        },
        "seed": int(seed),
        "n": n,
        "d": d,
    }
    return Dataset(samples=samples, metadata=metadata)


def make_sinusoid(intrinsic_dim: int, ambient_dim: int, n: int, seed: int = 0,
                  latent_variance: float = 3.0,
                  noise_variance: float = 1e-3) -> Dataset:
    """Sinusoids of sheared Gaussian latents, latents appended as coordinates.

    z ~ N(0, latent_variance * I_{d'}); for each extra ambient coordinate a
    shear vector a_j ~ Uniform(1, 2)^{d'} is drawn once and
    x_j = sin(a_j . z) + noise.  Samples are [x_1..x_{d-d'}, z_1..z_{d'}].
    """
    dp, d, n = int(intrinsic_dim), int(ambient_dim), int(n)
    if dp < 1:
        raise ValueError("intrinsic_dim must be >= 1")
    if d <= dp:
        raise ValueError(
            f"ambient_dim must exceed intrinsic_dim ({dp}), got {d}"
        )
    rng = np.random.default_rng(seed)
    shears = rng.uniform(1.0, 2.0, size=(d - dp, dp))
    z = rng.normal(size=(n, dp)) * math.sqrt(latent_variance)
    noise = rng.normal(size=(n, d - dp)) * math.sqrt(noise_variance)
    xs = np.sin(z @ shears.T) + noise
    samples = np.column_stack([xs, z])
    metadata = {
        "generator": "sinusoid",
        "params": {
            "intrinsic_dim": dp,
            "ambient_dim": d,
            "latent_variance": latent_variance,
            "noise_variance": noise_variance,
            "shears": [[float(v) for v in row] for row in shears],
        },
        "seed": int(seed),
        "n": n,
        "d": d,
    }
    return Dataset(samples=samples, metadata=metadata)
