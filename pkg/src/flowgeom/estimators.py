"""Scikit-learn style estimators wrapping the flow density and autoencoder.

These are thin facades over :mod:`flowgeom.training`, :mod:`flowgeom.geometry`
and :mod:`flowgeom.rae` so the models compose with sklearn pipelines,
``clone``, and grid search.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import rae
from .geometry import PullbackManifold
from .training import TrainConfig, train


def _validate(X, dim=None):
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"X has {X.shape[1]} features, expected {dim}")
    return X


class PullbackDensity(BaseEstimator):
    """Density estimator p(x) = exp(-psi(phi(x))) |det Dphi(x)| / C.

    phi is a coupling flow, psi an axis-aligned quadratic with learnable
    variances.  After fitting, ``manifold_`` exposes geodesics, log/exp
    maps, distances and barycentres of the induced pullback geometry.

    Parameters
    ----------
    variant : str
        One of "ours", "standard_nf", "anisotropic_nf", "isometric_nf".
    flow_steps, epochs, batch_size, lambda_iso, lambda_vol, learning_rate,
    warmup_steps, seed : training hyperparameters, see
        :class:`flowgeom.training.TrainConfig`.

    Attributes
    ----------
    flow_ : CouplingFlow
    potential_ : DiagonalQuadratic
    manifold_ : PullbackManifold
    variances_ : ndarray of shape (n_features,)
    history_ : list of per-epoch loss records
    """

    def __init__(self, variant="ours", flow_steps=8, epochs=500, batch_size=64,
                 lambda_iso=1.0, lambda_vol=1.0, learning_rate=3e-4,
                 warmup_steps=1000, seed=0):
        self.variant = variant
        self.flow_steps = flow_steps
        self.epochs = epochs
        self.batch_size = batch_size
        self.lambda_iso = lambda_iso
        self.lambda_vol = lambda_vol
        self.learning_rate = learning_rate
        self.warmup_steps = warmup_steps
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(
            variant=self.variant,
            flow_steps=self.flow_steps,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lambda_iso=self.lambda_iso,
            lambda_vol=self.lambda_vol,
            learning_rate=self.learning_rate,
            warmup_steps=self.warmup_steps,
            seed=self.seed,
        )

    def fit(self, X, y=None):
        X = _validate(X)
        result = train(X, self._config())
        self.flow_ = result.flow
        self.potential_ = result.potential
        self.manifold_ = PullbackManifold(result.flow, result.potential)
        self.history_ = result.history
        self.variances_ = result.potential.variances
        self.n_features_in_ = X.shape[1]
        return self

    def score_samples(self, X):
        """Log-density of each sample under the fitted model."""
        check_is_fitted(self, "flow_")
        X = _validate(X, self.n_features_in_)
        y, logdet = self.flow_.forward(X)
        lam = self.potential_.variances
        return (
            -0.5 * np.sum(y * y / lam, axis=-1)
            + logdet
            - 0.5 * float(np.log(lam).sum())
            - 0.5 * self.n_features_in_ * math.log(2.0 * math.pi)
        )

    def score(self, X, y=None):
        """Mean log-density (sklearn's density-estimator convention)."""
        return float(self.score_samples(X).mean())

    def transform(self, X):
        """Map samples to flow coordinates."""
        check_is_fitted(self, "flow_")
        X = _validate(X, self.n_features_in_)
        return self.flow_.forward(X)[0]

    def inverse_transform(self, Y):
        check_is_fitted(self, "flow_")
        Y = _validate(Y, self.n_features_in_)
        return self.flow_.inverse(Y)


class RiemannianAutoencoder(BaseEstimator, TransformerMixin):
    """Autoencoder reading off the highest-variance flow coordinates.

    ``transform`` projects onto the retained flow axes (highest learned
    variance first); ``inverse_transform`` zero-fills the discarded axes and
    maps back through the inverse flow.  The retained dimension is the
    smallest one whose discarded variance mass is at most ``epsilon`` of the
    total, so ``intrinsic_dim_`` estimates the data manifold dimension.

    Parameters
    ----------
    epsilon : float
        Relative variance budget for discarded axes, in [0, 1].
    density : PullbackDensity or None
        Optional prefit density model to reuse; when None a new one is
        fitted with the remaining hyperparameters.
    variant, flow_steps, epochs, batch_size, lambda_iso, lambda_vol,
    learning_rate, warmup_steps, seed : see :class:`PullbackDensity`.

    Attributes
    ----------
    intrinsic_dim_ : int
    axis_order_ : ndarray, all flow axes ordered by decreasing variance
    manifold_ : PullbackManifold
    """

    def __init__(self, epsilon=0.01, density=None, variant="ours", flow_steps=8,
                 epochs=500, batch_size=64, lambda_iso=1.0, lambda_vol=1.0,
                 learning_rate=3e-4, warmup_steps=1000, seed=0):
        self.epsilon = epsilon
        self.density = density
        self.variant = variant
        self.flow_steps = flow_steps
        self.epochs = epochs
        self.batch_size = batch_size
        self.lambda_iso = lambda_iso
        self.lambda_vol = lambda_vol
        self.learning_rate = learning_rate
        self.warmup_steps = warmup_steps
        self.seed = seed

    def fit(self, X, y=None):
        X = _validate(X)
        if self.density is not None:
            check_is_fitted(self.density, "flow_")
            density = self.density
            if density.n_features_in_ != X.shape[1]:
                raise ValueError(
                    f"prefit density expects {density.n_features_in_} features, "
                    f"X has {X.shape[1]}"
                )
        else:
            density = PullbackDensity(
                variant=self.variant,
                flow_steps=self.flow_steps,
                epochs=self.epochs,
                batch_size=self.batch_size,
                lambda_iso=self.lambda_iso,
                lambda_vol=self.lambda_vol,
                learning_rate=self.learning_rate,
                warmup_steps=self.warmup_steps,
                seed=self.seed,
            ).fit(X)
        self.density_ = density
        self.manifold_ = density.manifold_
        self.config_ = rae.RaeConfig.from_variances(density.variances_, self.epsilon)
        self.intrinsic_dim_ = self.config_.d_eps
        self.axis_order_ = self.config_.order
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        X = _validate(X, self.n_features_in_)
        return rae.encode(self.manifold_, self.config_, X)

    def inverse_transform(self, Z):
        check_is_fitted(self, "config_")
        Z = check_array(Z, dtype=np.float64, ensure_2d=True)
        return rae.decode(self.manifold_, self.config_, Z)

    def reconstruction_curve(self, X, order="decreasing", seed=None):
        """Mean reconstruction error as latent axes are added; see
        :func:`flowgeom.rae.reconstruction_curve`."""
        check_is_fitted(self, "config_")
        X = _validate(X, self.n_features_in_)
        return rae.reconstruction_curve(self.manifold_, X, order=order, seed=seed)

    def manifold_mesh(self, grid_points: int):
        """Decode a latent grid spanning +-3 standard deviations per axis."""
        check_is_fitted(self, "config_")
        return rae.manifold_mesh(self.manifold_, self.config_, grid_points)
