"""Minimal numpy tensor engine with reverse-mode automatic differentiation."""

from . import functional
from .fixture import read_tensor, write_tensor
from .functional import (
    bilinear_sample,
    conv2d,
    group_norm,
    gru_cell,
    linear,
    log_softmax,
    nll_loss,
    softmax,
)
from .nn import Conv2d, Embedding, GroupNorm, GRUCell, Linear, Module
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, backward, concat, no_grad, stack

__all__ = [
    "Adam",
    "AdamState",
    "Conv2d",
    "Embedding",
    "GRUCell",
    "GroupNorm",
    "Linear",
    "Module",
    "Tensor",
    "adam_step",
    "backward",
    "bilinear_sample",
    "concat",
    "conv2d",
    "functional",
    "group_norm",
    "gru_cell",
    "linear",
    "log_softmax",
    "nll_loss",
    "no_grad",
    "read_tensor",
    "softmax",
    "stack",
    "write_tensor",
]
