"""Minimal dense-tensor neural network engine: the layer set needed by the
1-D and 2-D heartbeat classifiers, exact backpropagation, weighted
cross-entropy, Adam, and a deterministic training loop."""

from .layers import (
    BatchNorm,
    Conv1D,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    MaxPool1D,
    MaxPool2D,
    ReLU,
    Softmax,
)
from .network import Network, weighted_cross_entropy
from .training import Adam, TrainConfig, train

__all__ = [
    "Adam",
    "BatchNorm",
    "Conv1D",
    "Conv2D",
    "Dense",
    "Dropout",
    "Flatten",
    "Layer",
    "MaxPool1D",
    "MaxPool2D",
    "Network",
    "ReLU",
    "Softmax",
    "TrainConfig",
    "train",
    "weighted_cross_entropy",
]
