"""Bayesian-regularized Levenberg-Marquardt training of small feedforward
networks, with a k-fold reproduction workflow for spatula peeling data."""

from brbpnn.data import (
    MODEL_I,
    MODEL_II,
    FoldPlan,
    ModelSpecChoice,
    Normalizer,
    PeelingRecord,
    fold_plan,
    load_dataset,
)
from brbpnn.network import NetworkParams, NetworkSpec, error_jacobian, forward
from brbpnn.trainer import TrainConfig, TrainReport, TrainState, train

__all__ = [
    "MODEL_I",
    "MODEL_II",
    "FoldPlan",
    "ModelSpecChoice",
    "NetworkParams",
    "NetworkSpec",
    "Normalizer",
    "PeelingRecord",
    "TrainConfig",
    "TrainReport",
    "TrainState",
    "error_jacobian",
    "fold_plan",
    "forward",
    "load_dataset",
    "train",
]

__version__ = "0.1.0"
