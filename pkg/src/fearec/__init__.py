"""Frequency-enhanced hybrid attention model for sequential recommendation."""

from .encoder import FEARec, ModelConfig
from .training import LossWeights, TrainConfig

__all__ = ["FEARec", "ModelConfig", "LossWeights", "TrainConfig"]
__version__ = "0.1.0"
