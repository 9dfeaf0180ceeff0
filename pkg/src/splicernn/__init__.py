"""Splice junction prediction with from-scratch recurrent networks."""
from .model import ModelConfig, SpliceModel, forward, loss, backward, predict
from .trainer import TrainConfig, train, evaluate

__version__ = "0.1.0"

__all__ = [
    "ModelConfig",
    "SpliceModel",
    "TrainConfig",
    "backward",
    "evaluate",
    "forward",
    "loss",
    "predict",
    "train",
]
