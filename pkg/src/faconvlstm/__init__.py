"""Factorized-attention ConvLSTM kit: tensor engine, layers, cost model and evaluation harness."""

from .blocks import ModelConfig
from .cell import ConvLSTM2D, ConvLSTMConfig, FAConvLSTM
from .data import SyntheticSpec, generate_synthetic_sequence
from .train import TrainSpec, train

__all__ = [
    "ConvLSTM2D",
    "ConvLSTMConfig",
    "FAConvLSTM",
    "ModelConfig",
    "SyntheticSpec",
    "TrainSpec",
    "generate_synthetic_sequence",
    "train",
]
__version__ = "0.1.0"
