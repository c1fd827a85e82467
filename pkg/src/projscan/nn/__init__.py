"""Minimal CNN kernels, loss, optimizer and checkpoint format."""

from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (
    BatchNorm2D,
    Conv2D,
    Dense,
    Dropout,
    GlobalAvgPool,
    Layer,
    ReLU,
    Sequential,
    conv2d_forward,
)
from .loss import mse_loss
from .optim import Adam

__all__ = [
    "Adam",
    "BatchNorm2D",
    "Conv2D",
    "Dense",
    "Dropout",
    "GlobalAvgPool",
    "Layer",
    "ReLU",
    "Sequential",
    "conv2d_forward",
    "load_checkpoint",
    "mse_loss",
    "save_checkpoint",
]
