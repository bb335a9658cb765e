"""Minimal differentiable layer stack: forward/backward ops, losses,
optimizers, gradient checking, and binary checkpoints."""

from .checkpoint import CheckpointError, load_checkpoint, load_into, save_checkpoint
from .gradcheck import finite_difference, max_relative_error
from .layers import (
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    Layer,
    MaxPool2d,
    Parameter,
    ReLU,
    Sequential,
    he_uniform,
)
from .losses import smooth_l1, softmax, softmax_cross_entropy
from .optim import SGD, Adam, Optimizer, make_optimizer

__all__ = [
    "Adam",
    "CheckpointError",
    "Conv2d",
    "Dense",
    "Dropout",
    "Flatten",
    "Layer",
    "MaxPool2d",
    "Optimizer",
    "Parameter",
    "ReLU",
    "SGD",
    "Sequential",
    "finite_difference",
    "he_uniform",
    "load_checkpoint",
    "load_into",
    "make_optimizer",
    "max_relative_error",
    "save_checkpoint",
    "smooth_l1",
    "softmax",
    "softmax_cross_entropy",
]
