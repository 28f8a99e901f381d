"""Learn deformed-Gaussian densities with a regularized coupling flow and
work with the closed-form pullback geometry they induce: geodesics, log/exp
maps, distances, barycentres, and a variance-ordered Riemannian autoencoder.
"""

from .engine import Graph, Parameter, Var, grad_check
from .potentials import ConvexPotential, DiagonalQuadratic
from .flow import CouplingFlow, load_model, save_model
from .geometry import (
    GroundTruthDiffeo,
    PullbackManifold,
    banana_diffeo,
    identity_diffeo,
    river_diffeo,
)
from .rae import RaeConfig, select_dimension
from .training import TrainConfig, train
from .estimators import PullbackDensity, RiemannianAutoencoder

__version__ = "0.1.0"

MODEL_SCHEMA = "pullback-flow/1"
REPORT_SCHEMA = "pullback-eval/1"

__all__ = [
    "Graph",
    "Parameter",
    "Var",
    "grad_check",
    "ConvexPotential",
    "DiagonalQuadratic",
    "CouplingFlow",
    "save_model",
    "load_model",
    "GroundTruthDiffeo",
    "PullbackManifold",
    "banana_diffeo",
    "river_diffeo",
    "identity_diffeo",
    "RaeConfig",
    "select_dimension",
    "TrainConfig",
    "train",
    "PullbackDensity",
    "RiemannianAutoencoder",
    "MODEL_SCHEMA",
    "REPORT_SCHEMA",
]
