"""Instantaneous trajectory prediction from two observed points.

The model forecasts features of the unobserved history backward from the
observed pair, refines them with a stack of attention blocks, and decodes a
set of scored future trajectories. Everything runs on a small tape-based
autodiff over NumPy.
"""

from .config import DataConfig, TrainConfig
from .evaluation import evaluate
from .model import ITPNet
from .trainer import predict, train

__version__ = "0.1.0"

__all__ = ["DataConfig", "ITPNet", "TrainConfig", "evaluate", "predict", "train", "__version__"]
