"""Online Bayesian adaptation of modular deep receivers over drifting channels."""

from ._backend import BACKEND
from .belief import GaussianBelief, SsmHyper, predict, prior_belief
from .learners import make_updater
from .network import MlpSpec
from .receiver import DeepSic, Monolithic, Pipeline

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DeepSic",
    "GaussianBelief",
    "MlpSpec",
    "Monolithic",
    "Pipeline",
    "SsmHyper",
    "make_updater",
    "predict",
    "prior_belief",
]
